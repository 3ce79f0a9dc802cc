"""Command-line entry point.

Every command takes a JSON config file (``--config``); keys are validated
against the command's schema before anything is computed, and unknown keys
are rejected.  Exit codes: 0 success, 1 numerical abort, 2 usage or I/O
error.

    mplex simulate --config sim.json
    mplex fit --config fit.json
    mplex select --config select.json
    mplex identify --config id.json
    mplex predict --config predict.json
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import io
from .analysis import (
    auc,
    gelman_rubin,
    geweke,
    mode_A,
    posterior_summaries,
    predict_missing,
    relabel,
    waic,
)
from .experiments import PRESETS, preset_data
from .gibbs import NumericalError, SamplerConfig, run_chain
from .identifiability import DEFAULT_NODE_CAP, in_A1, in_A2, in_A21, in_A22, in_A23, in_class_Md
from .model import NetworkShape, Truncation
from .spectral import DegenerateSpectrumError

log = logging.getLogger("mplex")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration

_SAMPLER_KEYS = {f.name: f for f in fields(SamplerConfig) if f.name != "truncation"}
_TRUNC_KEYS = {f"trunc_{f.name}": f for f in fields(Truncation)}

# key -> (type check, required)
_SCHEMAS = {
    "simulate": {
        "preset": (str, True), "seed": (int, True), "N": (int, False),
        "data": (str, True), "truth": (str, False),
    },
    "fit": {
        "data": (str, True), "shape": (list, True), "seed": (int, True),
        "out_dir": (str, True), "mask": (str, False), "chains": (int, False),
    },
    "select": {
        "data": (str, True), "grid": (dict, True), "seed": (int, True),
        "out_dir": (str, True),
    },
    "identify": {
        "matrix": (str, True), "S": (int, False), "node_cap": (int, False),
        "out": (str, False),
    },
    "predict": {
        "trace": (str, True), "shape": (list, True), "mask": (str, True),
        "truth": (str, False), "out": (str, False),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one command run.

    ``values`` holds the command keys; ``sampler`` the sampler settings
    (for ``fit`` and ``select``).
    """

    command: str
    values: dict
    sampler: SamplerConfig | None = None

    @classmethod
    def from_dict(cls, command, raw):
        if command not in _SCHEMAS:
            raise UsageError(f"unknown command {command!r}")
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        schema = _SCHEMAS[command]
        takes_sampler = command in ("fit", "select")
        allowed = set(schema) | (set(_SAMPLER_KEYS) | set(_TRUNC_KEYS) if takes_sampler else set())
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        values = {}
        for key, (typ, required) in schema.items():
            if key not in raw:
                if required:
                    raise UsageError(f"missing required config key {key!r}")
                continue
            v = raw[key]
            if typ is int and (isinstance(v, bool) or not isinstance(v, int)):
                raise UsageError(f"{key} must be an integer")
            if typ is not int and not isinstance(v, typ):
                raise UsageError(f"{key} must be of type {typ.__name__}")
            values[key] = v
        sampler = None
        if takes_sampler:
            kw = {}
            for key, f in _SAMPLER_KEYS.items():
                if key in raw:
                    kw[key] = raw[key]
            if "seed" in values:
                kw["seed"] = values["seed"]
            trunc = {key[len("trunc_"):]: raw[key] for key in _TRUNC_KEYS if key in raw}
            try:
                if trunc:
                    kw["truncation"] = Truncation(**trunc)
                sampler = SamplerConfig(**kw)
            except (TypeError, ValueError) as err:
                raise UsageError(f"invalid sampler settings: {err}") from None
        return cls(command, values, sampler)

    def to_dict(self):
        out = dict(self.values)
        if self.sampler is not None:
            for key in _SAMPLER_KEYS:
                out[key] = getattr(self.sampler, key)
            if self.sampler.truncation is not None:
                for key in _TRUNC_KEYS:
                    out[key] = getattr(self.sampler.truncation, key[len("trunc_"):])
        return out


def load_config(command, path):
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read config: {err}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"config is not valid JSON: {err}") from None
    return RunConfig.from_dict(command, raw)


def _shape(values, key="shape"):
    try:
        return NetworkShape(values[key])
    except (TypeError, ValueError) as err:
        raise UsageError(f"bad shape: {err}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig):
    v = cfg.values
    if v["preset"] not in PRESETS:
        raise UsageError(f"unknown preset {v['preset']!r}; choose from {sorted(PRESETS)}")
    N = v.get("N")
    if N is not None and N < 0:
        raise UsageError("N must be non-negative")
    data = preset_data(v["preset"], v["seed"], N)
    io.write_dataset(v["data"], data.X)
    if "truth" in v:
        io.write_json(v["truth"], io.truth_to_dict(data))
    return {"N": int(data.X.shape[0]), "p_K": int(data.X.shape[1])}


def _scalar_traces(trace):
    """Named scalar traces of the continuous parameters."""
    out = {}
    for k in range(1, trace.shape.K + 1):
        out[f"C_{k}"] = trace.C[:, k - 1]
        g = trace.gamma(k)
        q = g.shape[1]
        for s in range(q):
            for t in range(s, q):
                out[f"Gamma_{k}[{s},{t}]"] = g[:, s, t]
    return out


def _fit_chains(X, shape, sampler, mask, chains):
    traces = []
    for c in range(chains):
        conf = sampler if c == 0 else _with_seed(sampler, [sampler.seed, c])
        traces.append(run_chain(X, shape, conf, mask=mask))
    return traces


def _with_seed(sampler, seed):
    kw = {f.name: getattr(sampler, f.name) for f in fields(SamplerConfig)}
    kw["seed"] = seed
    return SamplerConfig(**kw)


def summarize(traces):
    """Summary dictionary of one or more chains of the same model."""
    ref = traces[0].records[0]
    aligned = [relabel(t, reference=ref) for t in traces]
    std = [t.phase("standard") for t in aligned]
    std = [t for t in std if len(t)]
    main = std[0] if std else aligned[0]
    summ = posterior_summaries(main)
    out = {"n_draws": summ.n_draws, "anomalies": sum(t.anomalies for t in traces), "posterior": {}}
    for name, s in summ.params.items():
        if name.startswith("A_"):
            continue
        out["posterior"][name] = {"mean": s.mean, "sd": s.sd}
    out["A_mode"] = {}
    for k in range(1, main.shape.K + 1):
        a, freq = mode_A(main, k)
        out["A_mode"][f"A_{k}"] = {"rows": ["".join(map(str, r)) for r in a], "frequency": float(freq)}
    L = main.loglik
    if len(L):
        w = waic(L)
        out["waic"] = {"waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic}
    gw = {}
    for name, x in _scalar_traces(main).items():
        if len(x) >= 20:
            d = geweke(x)
            gw[name] = {"z": d.value, "degenerate": d.degenerate}
    out["geweke"] = gw
    if len(std) >= 2:
        n = min(len(t) for t in std)
        rh = {}
        per_chain = [_scalar_traces(t) for t in std]
        if n >= 4:
            for name in per_chain[0]:
                d = gelman_rubin(np.array([pc[name][:n] for pc in per_chain]))
                rh[name] = {"rhat": d.value, "degenerate": d.degenerate}
        out["gelman_rubin"] = rh
    else:
        out["gelman_rubin"] = None
    return out


def cmd_fit(cfg: RunConfig):
    v = cfg.values
    shape = _shape(v)
    X = _read_data(v["data"])
    if X.shape[1] != shape.p[-1]:
        raise UsageError(f"data has {X.shape[1]} nodes, shape expects {shape.p[-1]}")
    if X.shape[0] == 0:
        raise UsageError("cannot fit an empty dataset")
    mask = None
    if "mask" in v:
        mask, N, p = _read_mask(v["mask"])
        if (N, p) != X.shape[:2]:
            raise UsageError("mask header does not match the dataset")
    chains = v.get("chains", 1)
    if chains < 1:
        raise UsageError("chains must be at least 1")
    out = Path(v["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "resolved_config.json", cfg.to_dict())
    t0 = time.perf_counter()
    traces = _fit_chains(X, shape, cfg.sampler, mask, chains)
    elapsed = time.perf_counter() - t0
    io.write_trace(out / "trace.ndjson", traces)
    io.write_json(out / "summary.json", summarize(traces))
    io.write_json(out / "timing.json", {"seconds": elapsed})
    return {"out_dir": str(out)}


def grid_shapes(grid, p_K):
    """Candidate shapes from ``{"p0": [...], "p1": [...]}`` (``p1`` optional
    for two-layer models), keeping those with ``p_k >= 2 p_{k-1}``."""
    if "p0" not in grid or set(grid) - {"p0", "p1"}:
        raise UsageError('grid must have key "p0" and optionally "p1"')
    shapes = []
    for p0 in grid["p0"]:
        mids = grid.get("p1")
        cands = [(p0, p_K)] if mids is None else [(p0, p1, p_K) for p1 in mids]
        for s in cands:
            if all(b >= 2 * a for a, b in zip(s, s[1:])):
                shapes.append(tuple(int(x) for x in s))
    return shapes


def _fit_cell(args):
    X, shape, sampler = args
    try:
        tr = run_chain(X, shape, sampler)
        L = tr.phase("standard").loglik
        w = waic(L)
        return {"shape": list(shape), "waic": w.waic, "lppd": w.lppd, "p_waic": w.p_waic, "error": None}
    except (NumericalError, ValueError) as err:
        return {"shape": list(shape), "waic": None, "lppd": None, "p_waic": None, "error": str(err)}


def _workers():
    raw = os.environ.get("MPLEX_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MPLEX_THREADS must be an integer, got {raw!r}") from None
    if n <= 0:
        return os.cpu_count() or 1
    return n


def run_select(X, shapes, sampler, workers=1):
    """WAIC of every candidate shape; rows in grid order."""
    jobs = [(X, NetworkShape(s), sampler) for s in shapes]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            return list(ex.map(_fit_cell, jobs))
    return [_fit_cell(j) for j in jobs]


def cmd_select(cfg: RunConfig):
    v = cfg.values
    X = _read_data(v["data"])
    if X.shape[0] == 0:
        raise UsageError("cannot fit an empty dataset")
    shapes = grid_shapes(v["grid"], X.shape[1])
    out = Path(v["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "resolved_config.json", cfg.to_dict())
    if not shapes:
        warnings.warn("no grid cell satisfies p_k >= 2 p_(k-1); nothing to fit", stacklevel=2)
        log.warning("empty selection grid")
    table = run_select(X, shapes, cfg.sampler, _workers())
    ok = [r for r in table if r["waic"] is not None]
    best = min(ok, key=lambda r: r["waic"])["shape"] if ok else None
    io.write_json(out / "waic.json", {"table": table, "argmin": best})
    return {"argmin": best, "cells": len(table)}


def cmd_identify(cfg: RunConfig):
    v = cfg.values
    obj = _read_json(v["matrix"])
    A = obj.get("A") if isinstance(obj, dict) else None
    if not isinstance(A, list) or not A:
        raise UsageError('matrix file must hold {"A": [layer, ...]}')
    try:
        layers = [np.array(a, dtype=np.int64) for a in A]
    except (TypeError, ValueError):
        raise UsageError("layers must be rectangular 0/1 arrays") from None
    if any(a.ndim != 2 or np.any((a != 0) & (a != 1)) for a in layers):
        raise UsageError("layers must be rectangular 0/1 arrays")
    cap = v.get("node_cap", DEFAULT_NODE_CAP)
    S = v.get("S")
    a21 = in_A21(layers, node_cap=cap)
    a2 = in_A2(layers, S=S, node_cap=cap)
    report = {
        "A1": in_A1(layers),
        "A21": _status(a21),
        "A22": in_A22(layers),
        "A23": in_A23(layers),
        "A2": _status(a2),
        "layers": [],
    }
    for a in layers:
        entry = {"shape": list(a.shape)}
        q = a.shape[1]
        if a.shape[0] >= 2 * q and np.array_equal(a[:q], np.eye(q, dtype=np.int64)):
            md = in_class_Md(a[q:2 * q].T)
            entry["M_block_in_class"] = md.in_class
            entry["witness"] = _witness(md.witness)
        report["layers"].append(entry)
    if "out" in v:
        io.write_json(v["out"], report)
    else:
        print(io.dumps(report, indent=2))
    return report


def _status(v):
    return "undecided" if v is None else bool(v)


def _witness(w):
    if w is None:
        return None
    return [w[0]] + [np.asarray(x).tolist() if not isinstance(x, int) else x for x in w[1:]]


def cmd_predict(cfg: RunConfig):
    v = cfg.values
    shape = _shape(v)
    mask, N, p = _read_mask(v["mask"])
    try:
        traces = io.read_trace(v["trace"], shape, mask=mask)
    except OSError as err:
        raise UsageError(f"cannot read trace: {err}") from None
    if not len(mask):
        result = {"positions": [], "probability": []}
    else:
        if not traces:
            raise UsageError("trace is empty")
        probs = np.concatenate([[predict_missing(t, mask)] for t in traces]).mean(axis=0)
        result = {"positions": [list(map(int, e)) for e in mask.positions], "probability": probs}
        if "truth" in v:
            X = _read_data(v["truth"])
            if X.shape[:2] != (N, p):
                raise UsageError("truth dataset does not match the mask header")
            n, i, j = (np.array(c) for c in zip(*mask.positions))
            labels = X[n, i, j]
            result["auc"] = auc(labels, probs) if 0 < labels.sum() < len(labels) else None
    if "out" in v:
        io.write_json(v["out"], result)
    else:
        print(io.dumps(result, indent=2))
    return result


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise UsageError(f"{path} is not valid JSON: {err}") from None


def _read_data(path):
    try:
        return io.read_dataset(path)
    except OSError as err:
        raise UsageError(f"cannot read dataset: {err}") from None
    except io.FormatError as err:
        raise UsageError(str(err)) from None


def _read_mask(path):
    try:
        return io.read_mask(path)
    except OSError as err:
        raise UsageError(f"cannot read mask: {err}") from None
    except io.FormatError as err:
        raise UsageError(str(err)) from None


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "identify": cmd_identify,
    "predict": cmd_predict,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mplex", description="Layered multiplex network models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config)
        COMMANDS[args.command](cfg)
    except UsageError as err:
        print(f"mplex: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"mplex: I/O error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateSpectrumError) as err:
        print(f"mplex: numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
