import json

import numpy as np
import pytest

from mplex import io
from mplex.cli import RunConfig, UsageError, grid_shapes, main
from mplex.gibbs import EdgeMask, SamplerConfig, run_chain
from mplex.model import simulate
from oracles import random_params


def write_cfg(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def observed(params, N, seed):
    return simulate(params.shape, params, N=N, seed=seed, as_samples=False)[-1]


def run(tmp_path, command, cfg, name="cfg.json"):
    return main([command, "--config", write_cfg(tmp_path / name, cfg)])


class TestFormats:
    def test_dataset_round_trip(self, tmp_path):
        X = observed(random_params((2, 5), np.random.default_rng(0)), 7, 1)
        io.write_dataset(tmp_path / "d.json", X)
        np.testing.assert_array_equal(io.read_dataset(tmp_path / "d.json"), X)

    def test_empty_dataset(self, tmp_path):
        io.write_dataset(tmp_path / "d.json", np.zeros((0, 4, 4), dtype=np.int8))
        assert io.read_dataset(tmp_path / "d.json").shape == (0, 4, 4)

    def test_mask_round_trip(self, tmp_path):
        mask = EdgeMask([(0, 1, 3), (2, 0, 1)], 3, 4)
        io.write_mask(tmp_path / "m.json", mask, 3, 4)
        back, N, p = io.read_mask(tmp_path / "m.json")
        assert (N, p) == (3, 4)
        assert [tuple(e) for e in back.positions] == [tuple(e) for e in mask.positions]

    @pytest.mark.parametrize("obj", [
        {"format": "other", "p_K": 3, "N": 1, "samples": ["000"]},
        {"format": "mpx-v1", "p_K": 3, "N": 2, "samples": ["000"]},
        {"format": "mpx-v1", "p_K": 3, "N": 1, "samples": ["0a0"]},
        {"format": "mpx-v1", "p_K": 3, "N": 1, "samples": ["0000"]},
    ])
    def test_bad_dataset(self, tmp_path, obj):
        (tmp_path / "d.json").write_text(json.dumps(obj))
        with pytest.raises(io.FormatError):
            io.read_dataset(tmp_path / "d.json")

    def test_bad_mask_entry(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps({"format": "mpx-v1", "p_K": 3, "N": 1, "missing": [[0, 2, 1]]}))
        with pytest.raises(io.FormatError):
            io.read_mask(tmp_path / "m.json")

    def test_trace_round_trip(self, tmp_path):
        pr = random_params((2, 4, 8), np.random.default_rng(1))
        X = observed(pr, 5, 0)
        mask = EdgeMask([(0, 0, 1), (3, 2, 7)], 5, 8)
        tr = run_chain(X, pr.shape, SamplerConfig(standard_iters=4, seed=2), mask=mask, init=pr.A)
        io.write_trace(tmp_path / "t.ndjson", tr)
        (back,) = io.read_trace(tmp_path / "t.ndjson", pr.shape, mask=mask)
        assert len(back.records) == len(tr.records)
        for a, b in zip(tr.records, back.records):
            assert (a.t, a.phase) == (b.t, b.phase)
            for x, y in zip(a.A, b.A):
                np.testing.assert_array_equal(x, y)
            for x, y in zip(a.Gamma, b.Gamma):
                np.testing.assert_array_equal(x, y)
            np.testing.assert_array_equal(a.C, b.C)
            np.testing.assert_array_equal(a.nu, b.nu)
            np.testing.assert_array_equal(a.loglik, b.loglik)
            np.testing.assert_array_equal(a.x0, b.x0)
            np.testing.assert_array_equal(a.latents[0], b.latents[0])
            np.testing.assert_array_equal(a.imputed, b.imputed)

    def test_params_round_trip(self):
        pr = random_params((2, 4, 8), np.random.default_rng(5))
        back = io.params_from_dict(json.loads(io.dumps(io.params_to_dict(pr))))
        for x, y in zip(pr.A, back.A):
            np.testing.assert_array_equal(x, y)
        np.testing.assert_array_equal(pr.nu, back.nu)

    def test_dumps_nonfinite(self):
        assert json.loads(io.dumps({"a": float("inf"), "b": 1.0})) == {"a": float("inf"), "b": 1.0}


class TestConfig:
    def test_round_trip(self):
        raw = {"data": "d.json", "shape": [2, 4], "seed": 3, "out_dir": "o", "standard_iters": 7,
               "trunc_gamma_lo": 1.0}
        cfg = RunConfig.from_dict("fit", raw)
        again = RunConfig.from_dict("fit", cfg.to_dict())
        assert again == cfg
        assert cfg.sampler.seed == 3 and cfg.sampler.standard_iters == 7
        assert cfg.sampler.truncation.gamma_lo == 1.0

    @pytest.mark.parametrize("raw", [
        {"data": "d", "shape": [2, 4], "out_dir": "o"},
        {"data": "d", "shape": [2, 4], "seed": 1.5, "out_dir": "o"},
        {"data": "d", "shape": [2, 4], "seed": 1, "out_dir": "o", "bogus": 1},
        {"data": "d", "shape": [2, 4], "seed": 1, "out_dir": "o", "S": 0},
    ])
    def test_rejects(self, raw):
        with pytest.raises(UsageError):
            RunConfig.from_dict("fit", raw)

    def test_grid(self):
        assert grid_shapes({"p0": [2, 3], "p1": [4, 6, 10]}, 20) == [(2, 4, 20), (2, 6, 20), (2, 10, 20),
                                                                   (3, 6, 20), (3, 10, 20)]
        assert grid_shapes({"p0": [4]}, 6) == []


class TestCli:
    def test_simulate_presets(self, tmp_path):
        assert run(tmp_path, "simulate", {"preset": "sim-small", "seed": 0, "data": str(tmp_path / "a.json"),
                                          "truth": str(tmp_path / "t.json")}) == 0
        assert io.read_dataset(tmp_path / "a.json").shape == (300, 16, 16)
        truth = json.loads((tmp_path / "t.json").read_text())
        assert truth["shape"] == [3, 6, 16]
        assert run(tmp_path, "simulate", {"preset": "hsbm27", "seed": 0, "N": 5,
                                          "data": str(tmp_path / "h.json")}) == 0
        assert io.read_dataset(tmp_path / "h.json").shape == (5, 27, 27)

    def test_unknown_preset(self, tmp_path):
        assert run(tmp_path, "simulate", {"preset": "nope", "seed": 0, "data": str(tmp_path / "a.json")}) == 2

    def test_fit_reproducible(self, tmp_path):
        run(tmp_path, "simulate", {"preset": "sim-small", "seed": 1, "N": 150, "data": str(tmp_path / "d.json")})
        outs = []
        for name in ("o1", "o2"):
            cfg = {"data": str(tmp_path / "d.json"), "shape": [3, 6, 16], "seed": 4,
                   "out_dir": str(tmp_path / name), "standard_iters": 3, "chains": 2}
            assert run(tmp_path, "fit", cfg) == 0
            outs.append(tmp_path / name)
        for f in ("trace.ndjson", "summary.json", "resolved_config.json"):
            a, b = (o / f for o in outs)
            if f == "resolved_config.json":
                da, db = json.loads(a.read_text()), json.loads(b.read_text())
                da.pop("out_dir"), db.pop("out_dir")
                assert da == db
            else:
                assert a.read_bytes() == b.read_bytes()
        summary = json.loads((outs[0] / "summary.json").read_text())
        assert summary["gelman_rubin"] is not None
        assert set(summary["A_mode"]) == {"A_1", "A_2"}

    def test_fit_degenerate_init(self, tmp_path, capsys):
        # two disconnected blocks: the spectral start is undefined
        lab = np.repeat([0, 1], 4)
        B = (lab[:, None] == lab[None, :]).astype(np.int8)
        np.fill_diagonal(B, 0)
        io.write_dataset(tmp_path / "d.json", np.stack([B] * 3))
        cfg = {"data": str(tmp_path / "d.json"), "shape": [2, 8], "seed": 0, "out_dir": str(tmp_path / "o")}
        assert run(tmp_path, "fit", cfg) == 1
        assert "numerical abort" in capsys.readouterr().err

    def test_fit_missing_data(self, tmp_path, capsys):
        cfg = {"data": str(tmp_path / "none.json"), "shape": [2, 4], "seed": 0, "out_dir": str(tmp_path / "o")}
        assert run(tmp_path, "fit", cfg) == 2
        assert "error" in capsys.readouterr().err

    def test_fit_shape_mismatch(self, tmp_path):
        io.write_dataset(tmp_path / "d.json", np.zeros((3, 5, 5), dtype=np.int8))
        cfg = {"data": str(tmp_path / "d.json"), "shape": [2, 4], "seed": 0, "out_dir": str(tmp_path / "o")}
        assert run(tmp_path, "fit", cfg) == 2

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert main(["fit", "--config", str(tmp_path / "c.json")]) == 2

    def test_select_single_cell(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MPLEX_THREADS", "1")
        pr = random_params((2, 5), np.random.default_rng(0))
        io.write_dataset(tmp_path / "d.json", observed(pr, 10, 0))
        cfg = {"data": str(tmp_path / "d.json"), "grid": {"p0": [2]}, "seed": 0,
               "out_dir": str(tmp_path / "o"), "standard_iters": 4}
        assert run(tmp_path, "select", cfg) == 0
        res = json.loads((tmp_path / "o" / "waic.json").read_text())
        assert len(res["table"]) == 1 and res["argmin"] == [2, 5]
        assert np.isfinite(res["table"][0]["waic"])

    def test_select_infeasible_grid(self, tmp_path):
        io.write_dataset(tmp_path / "d.json", np.zeros((3, 5, 5), dtype=np.int8))
        cfg = {"data": str(tmp_path / "d.json"), "grid": {"p0": [3, 4]}, "seed": 0, "out_dir": str(tmp_path / "o")}
        with pytest.warns(UserWarning):
            assert run(tmp_path, "select", cfg) == 0
        res = json.loads((tmp_path / "o" / "waic.json").read_text())
        assert res == {"table": [], "argmin": None}

    def identify(self, tmp_path, layers, **extra):
        (tmp_path / "A.json").write_text(json.dumps({"A": layers}))
        cfg = {"matrix": str(tmp_path / "A.json"), "out": str(tmp_path / "r.json"), **extra}
        code = run(tmp_path, "identify", cfg)
        return code, json.loads((tmp_path / "r.json").read_text()) if code == 0 else None

    def test_identify_identity_stack(self, tmp_path):
        a = np.vstack([np.eye(3), np.eye(3)]).astype(int).tolist()
        code, rep = self.identify(tmp_path, [a])
        assert code == 0
        assert rep["A1"] and rep["A21"] is True and rep["A22"] and rep["A23"] and rep["A2"] is True
        assert rep["layers"][0]["M_block_in_class"] is True

    def test_identify_counterexample(self, tmp_path):
        M = np.array([[1, 1, 0], [1, 1, 0], [1, 0, 1]])
        a = np.vstack([np.eye(3, dtype=int), M.T]).tolist()
        code, rep = self.identify(tmp_path, [a])
        entry = rep["layers"][0]
        assert entry["M_block_in_class"] is False
        assert entry["witness"][0] in ("collision", "diagonal")

    def test_identify_undecided(self, tmp_path):
        from mplex.experiments import sim_truth
        layers = [np.asarray(a).tolist() for a in sim_truth().A]
        code, rep = self.identify(tmp_path, layers, S=2, node_cap=1)
        assert code == 0 and rep["A21"] == "undecided" and rep["A2"] == "undecided"

    def test_identify_rejects_non_binary(self, tmp_path):
        (tmp_path / "A.json").write_text(json.dumps({"A": [[[2, 0], [0, 1]]]}))
        assert run(tmp_path, "identify", {"matrix": str(tmp_path / "A.json")}) == 2

    def test_predict(self, tmp_path):
        pr = random_params((2, 5), np.random.default_rng(2))
        X = observed(pr, 8, 3)
        io.write_dataset(tmp_path / "d.json", X)
        mask = EdgeMask.random(8, 5, 0.2, seed=0)
        io.write_mask(tmp_path / "m.json", mask, 8, 5)
        cfg = {"data": str(tmp_path / "d.json"), "shape": [2, 5], "seed": 0, "out_dir": str(tmp_path / "o"),
               "mask": str(tmp_path / "m.json"), "standard_iters": 5}
        assert run(tmp_path, "fit", cfg) == 0
        base = {"trace": str(tmp_path / "o" / "trace.ndjson"), "shape": [2, 5], "mask": str(tmp_path / "m.json")}
        assert run(tmp_path, "predict", {**base, "out": str(tmp_path / "p.json")}) == 0
        res = json.loads((tmp_path / "p.json").read_text())
        assert "auc" not in res and len(res["probability"]) == len(mask)
        assert all(0 <= v <= 1 for v in res["probability"])
        assert run(tmp_path, "predict", {**base, "truth": str(tmp_path / "d.json"), "out": str(tmp_path / "q.json")}) == 0
        res = json.loads((tmp_path / "q.json").read_text())
        assert "auc" in res

    def test_predict_empty_mask(self, tmp_path):
        io.write_mask(tmp_path / "m.json", EdgeMask([], 2, 4), 2, 4)
        (tmp_path / "t.ndjson").write_text("")
        cfg = {"trace": str(tmp_path / "t.ndjson"), "shape": [2, 4], "mask": str(tmp_path / "m.json"),
               "out": str(tmp_path / "p.json")}
        assert run(tmp_path, "predict", cfg) == 0
        assert json.loads((tmp_path / "p.json").read_text()) == {"positions": [], "probability": []}
