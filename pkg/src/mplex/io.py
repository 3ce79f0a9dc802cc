"""File formats: datasets, masks, truths and traces.

Datasets are JSON objects ``{"format": "mpx-v1", "p_K": p, "N": N,
"samples": [...]}`` where each sample is the 0/1 string of the strict
upper triangle, row-major.  Mask files share the header and list missing
entries as ``[n, i, j]`` triples with ``i < j``.  Traces are
newline-delimited JSON, one kept state per line, with floats written to 17
significant digits so that reruns compare byte for byte.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .gibbs import ChainTrace, EdgeMask, SamplerConfig, TraceRecord
from .model import ModelParams, NetworkShape, from_upper_bits, n_pairs, pair_index, upper_bits

FORMAT = "mpx-v1"

__all__ = [
    "FORMAT",
    "FormatError",
    "dumps",
    "write_json",
    "write_dataset",
    "read_dataset",
    "write_mask",
    "read_mask",
    "params_to_dict",
    "params_from_dict",
    "record_to_dict",
    "record_from_dict",
    "write_trace",
    "read_trace",
]


class FormatError(ValueError):
    """A file does not follow the expected layout."""


# ---------------------------------------------------------------------------
# deterministic JSON


def _float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = "%.17g" % x
    # keep floats recognisable as floats
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent=None, _level=0):
    """JSON text with floats at 17 significant digits and sorted-free
    (insertion-ordered) keys.  Handles dicts, lists, tuples, numpy arrays
    and scalars, strings, bools and None."""
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if indent is None:
        sep, pad, end = ", ", "", ""
    else:
        pad = "\n" + " " * (indent * (_level + 1))
        sep, end = "," + pad, "\n" + " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{" + (pad if indent else "") + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [dumps(v, indent, _level + 1) for v in obj]
        return "[" + (pad if indent else "") + sep.join(items) + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj):
    Path(path).write_text(dumps(obj, indent=2) + "\n", encoding="utf-8")


def _load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: not valid JSON ({err})") from None


def _check_header(obj, path):
    if not isinstance(obj, dict) or obj.get("format") != FORMAT:
        raise FormatError(f"{path}: expected an object with format {FORMAT!r}")
    for key in ("p_K", "N"):
        if not isinstance(obj.get(key), int) or obj[key] < 0:
            raise FormatError(f"{path}: {key} must be a non-negative integer")


# ---------------------------------------------------------------------------
# datasets and masks


def _bitstring(bits):
    return "".join("1" if b else "0" for b in bits)


def write_dataset(path, X):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError("expected a stack of square matrices")
    p = X.shape[1]
    obj = {"format": FORMAT, "p_K": p, "N": X.shape[0],
           "samples": [_bitstring(b) for b in upper_bits(X)]}
    write_json(path, obj)


def read_dataset(path):
    """Load a dataset as an ``(N, p_K, p_K)`` int8 stack."""
    obj = _load(path)
    _check_header(obj, path)
    p, N = obj["p_K"], obj["N"]
    samples = obj.get("samples")
    if not isinstance(samples, list) or len(samples) != N:
        raise FormatError(f"{path}: expected {N} samples")
    m = n_pairs(p)
    bits = np.zeros((N, m), dtype=np.int8)
    for n, s in enumerate(samples):
        if not isinstance(s, str) or len(s) != m or set(s) - {"0", "1"}:
            raise FormatError(f"{path}: sample {n} is not a 0/1 string of length {m}")
        bits[n] = np.frombuffer(s.encode(), dtype=np.uint8) - ord("0")
    return from_upper_bits(bits, p)


def write_mask(path, mask: EdgeMask, N, p):
    obj = {"format": FORMAT, "p_K": p, "N": N,
           "missing": [[int(n), int(i), int(j)] for n, i, j in mask.positions]}
    write_json(path, obj)


def read_mask(path):
    obj = _load(path)
    _check_header(obj, path)
    N, p = obj["N"], obj["p_K"]
    out = []
    for e in obj.get("missing", []):
        if not (isinstance(e, list) and len(e) == 3 and all(isinstance(v, int) for v in e)):
            raise FormatError(f"{path}: bad mask entry {e!r}")
        n, i, j = e
        if not (0 <= n < N and 0 <= i < j < p):
            raise FormatError(f"{path}: mask entry {e} out of range")
        out.append((n, i, j))
    return EdgeMask(out, N, p), N, p


# ---------------------------------------------------------------------------
# parameters and traces


def _matrix_rows(a):
    return [_bitstring(r) for r in np.asarray(a)]


def params_to_dict(params: ModelParams):
    return {
        "shape": list(params.shape.p),
        "A": [_matrix_rows(a) for a in params.A],
        "C": np.asarray(params.C, dtype=float).tolist(),
        "Gamma": [np.asarray(g, dtype=float).tolist() for g in params.Gamma],
        "nu": np.asarray(params.nu, dtype=float).tolist(),
    }


def _parse_rows(rows):
    return np.array([[int(c) for c in r] for r in rows], dtype=np.int8)


def params_from_dict(obj):
    try:
        A = tuple(_parse_rows(a) for a in obj["A"])
        Gamma = tuple(np.array(g, dtype=float) for g in obj["Gamma"])
        return ModelParams(A, np.array(obj["C"], dtype=float), Gamma, np.array(obj["nu"], dtype=float))
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"malformed parameter block: {err}") from None


def _upper_incl_diag(g):
    iu = np.triu_indices(g.shape[0])
    return g[iu]


def _from_upper_incl_diag(v, q):
    g = np.zeros((q, q))
    iu = np.triu_indices(q)
    g[iu] = v
    g[iu[1], iu[0]] = v
    return g


def record_to_dict(rec: TraceRecord, chain=0):
    d = {
        "chain": chain,
        "t": rec.t,
        "phase": rec.phase,
        "A": ["".join(_matrix_rows(a)) for a in rec.A],
        "C": rec.C,
        "Gamma": [_upper_incl_diag(g) for g in rec.Gamma],
        "nu": rec.nu,
        "loglik": rec.loglik,
    }
    if rec.x0 is not None:
        d["x0"] = rec.x0
        d["latents"] = [[_bitstring(b) for b in lat] for lat in rec.latents]
    if rec.imputed is not None:
        d["imputed"] = _bitstring(rec.imputed)
    return d


def record_from_dict(d, shape: NetworkShape):
    p = shape.p
    A = tuple(np.frombuffer(s.encode(), dtype=np.uint8).astype(np.int8).reshape(p[k + 1], p[k]) - ord("0")
              for k, s in enumerate(d["A"]))
    Gamma = tuple(_from_upper_incl_diag(np.array(v, dtype=float), p[k]) for k, v in enumerate(d["Gamma"]))
    x0 = np.array(d["x0"], dtype=np.int64) if "x0" in d else None
    latents = None
    if "latents" in d:
        latents = tuple(np.array([[int(c) for c in s] for s in lat], dtype=np.int8).reshape(-1, n_pairs(p[k + 1]))
                        for k, lat in enumerate(d["latents"]))
    imputed = np.array([int(c) for c in d["imputed"]], dtype=np.int8) if "imputed" in d else None
    loglik = None if d.get("loglik") is None else np.array(d["loglik"], dtype=float)
    return TraceRecord(int(d["t"]), d["phase"], A, np.array(d["C"], dtype=float), Gamma,
                       np.array(d["nu"], dtype=float), loglik, x0, latents, imputed)


def write_trace(path, traces):
    """Write one or more chains to an NDJSON file, chain by chain."""
    if isinstance(traces, ChainTrace):
        traces = [traces]
    with open(path, "w", encoding="utf-8") as fh:
        for c, tr in enumerate(traces):
            for rec in tr.records:
                fh.write(dumps(record_to_dict(rec, c)) + "\n")


def read_trace(path, shape, config=None, mask=None):
    """Read an NDJSON trace back into a list of :class:`ChainTrace`, one per chain."""
    shape = shape if isinstance(shape, NetworkShape) else NetworkShape(shape)
    chains = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                chains.setdefault(int(d.get("chain", 0)), []).append(record_from_dict(d, shape))
            except (json.JSONDecodeError, KeyError, ValueError) as err:
                raise FormatError(f"{path}:{lineno}: {err}") from None
    config = config or SamplerConfig()
    return [ChainTrace(shape, config, chains[c], mask) for c in sorted(chains)]


def truth_to_dict(obj):
    """Ground truth for a simulated dataset (layered parameters and latent
    layers, or community labels for block-model data)."""
    if hasattr(obj, "truth"):
        d = params_to_dict(obj.truth)
        d["latents"] = [[_bitstring(b) for b in upper_bits(layer)] for layer in obj.layers[:-1]]
        return d
    return {"labels": [np.asarray(lab).tolist() for lab in obj.labels],
            "prob": np.asarray(obj.prob, dtype=float).tolist()}


__all__ += ["truth_to_dict", "pair_index"]
