"""Ground-truth designs and end-to-end pipelines used by the CLI and tests.

The simulation truth follows one recipe at every layer: ``A_k`` stacks an
identity (one pure node per parent community), the columns of a matrix
from ``M_{p_{k-1}}``, and a few extra rows with at most two ones.
Continuous parameters are ``C_k = -7``, ``Gamma_k = 4 11^T + 6 I`` and a
uniform ``nu``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import community_metrics, hierarchy_labels
from .gibbs import SamplerConfig, run_chain
from .model import HSBMData, ModelParams, NetworkShape, generate_hsbm, n_pairs, simulate
from .spectral import multilayer_init

__all__ = [
    "TRUE_C",
    "true_gamma",
    "bidiagonal_md",
    "sparse_md",
    "design_A",
    "sim_truth",
    "SimData",
    "simulate_design",
    "large_p_truth",
    "PRESETS",
    "preset_data",
    "hamming_after_matching",
    "fit_hsbm",
    "spectral_only",
]

TRUE_C = -7.0


def true_gamma(q):
    return 4.0 * np.ones((q, q)) + 6.0 * np.eye(q)


def bidiagonal_md(d):
    """Unit diagonal plus ones directly above it.  Belongs to ``M_d``."""
    return (np.eye(d, dtype=np.int8) + np.eye(d, k=1, dtype=np.int8)).astype(np.int8)


def sparse_md(d):
    """Identity plus a single one at ``(0, 1)``: the sparsest member of ``M_d``."""
    M = np.eye(d, dtype=np.int8)
    if d > 1:
        M[0, 1] = 1
    return M


# extra rows for the (3, 6, 16) design, as index pairs of parent nodes
_EXTRA_ROWS_16 = ((2,), (3, 5), (4,), (1,))


def design_A(q, p, extra=None):
    """``p x q`` connection matrix ``(I  M  B)^T`` with ``M`` from
    :func:`sparse_md`.  ``extra`` lists parent indices of the rows of
    ``B^T``; by default they cycle through ``0, 1, ...``."""
    if p < 2 * q:
        raise ValueError("need p >= 2q")
    rows = [np.eye(q, dtype=np.int8), sparse_md(q).T]
    n_extra = p - 2 * q
    if extra is None:
        extra = [(i % q,) for i in range(n_extra)]
    if len(extra) != n_extra:
        raise ValueError(f"need {n_extra} extra rows")
    B = np.zeros((n_extra, q), dtype=np.int8)
    for r, idx in enumerate(extra):
        B[r, list(idx)] = 1
    rows.append(B)
    return np.vstack(rows)


def sim_truth(p=(3, 6, 16)):
    """True parameters of the simulation design for shape ``p``."""
    shape = NetworkShape(p)
    A = []
    for k in range(1, shape.K + 1):
        q, pk = shape.p[k - 1], shape.p[k]
        extra = _EXTRA_ROWS_16 if (q, pk) == (6, 16) else None
        A.append(design_A(q, pk, extra))
    C = np.full(shape.K, TRUE_C)
    Gamma = [true_gamma(shape.p[k - 1]) for k in range(1, shape.K + 1)]
    nu = np.full(2 ** n_pairs(shape.p[0]), 2.0 ** -n_pairs(shape.p[0]))
    return ModelParams(tuple(A), C, tuple(Gamma), nu)


def large_p_truth(p1=68, p0=4):
    """``K = 1`` truth for the large-``p``, small-``N`` study.

    ``A_1`` is ``I``, then the columns of :func:`sparse_md`, then rows cycling through the single- and
    double-membership rows.  Submatrices of the top-left corner are valid
    designs for smaller ``p1``.
    """
    rows = [np.eye(p0, dtype=np.int8), sparse_md(p0).T]
    singles = [np.eye(p0, dtype=np.int8)[i] for i in range(p0)]
    doubles = []
    for i in range(p0):
        for j in range(i + 1, p0):
            r = np.zeros(p0, dtype=np.int8)
            r[[i, j]] = 1
            doubles.append(r)
    cycle = singles + doubles
    extra = [cycle[i % len(cycle)] for i in range(max(p1 - 2 * p0, 0))]
    A = np.vstack(rows + ([np.array(extra)] if extra else []))[:p1]
    nu = np.full(2 ** n_pairs(p0), 2.0 ** -n_pairs(p0))
    return ModelParams((A,), np.array([TRUE_C]), (true_gamma(p0),), nu)


@dataclass(frozen=True, eq=False)
class SimData:
    """Simulated layers; ``layers[-1]`` is the observed stack."""

    truth: ModelParams
    layers: list
    seed: int

    @property
    def X(self):
        return self.layers[-1]


def simulate_design(truth, N, seed):
    layers = simulate(truth.shape, truth, N=N, seed=seed, as_samples=False)
    return SimData(truth, layers, seed)


PRESETS = {
    "sim-small": dict(kind="layered", p=(3, 6, 16), N=300),
    "hsbm27": dict(kind="hsbm", tree=(3, 9, 27), N=50),
}


def preset_data(name, seed, N=None):
    """Data for a named preset.  Returns ``SimData`` or ``HSBMData``."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    N = spec["N"] if N is None else N
    if spec["kind"] == "layered":
        return simulate_design(sim_truth(spec["p"]), N, seed)
    return generate_hsbm(spec["tree"], N=N, seed=seed)


def hamming_after_matching(A_est, A_true):
    """Hamming distance between estimated and true connection matrices
    after aligning latent labels from the observed layer down."""
    from .analysis import column_permutation
    A_est = [np.asarray(a) for a in A_est]
    total = 0
    for k in range(len(A_true) - 1, -1, -1):
        perm = column_permutation(A_est[k], A_true[k])
        A_est[k] = A_est[k][:, perm]
        if k > 0:
            A_est[k - 1] = A_est[k - 1][perm, :]
    for a, b in zip(A_est, A_true):
        total += int(np.sum(a != b))
    return total


def fit_hsbm(data: HSBMData, config: SamplerConfig, shape=None):
    """Fit the layered model to hierarchical SBM data and score the
    recovered communities at each tree level.

    Every recorded draw of the connection matrices induces a labeling of
    the observed nodes at each level (:func:`~mplex.analysis.hierarchy_labels`);
    NMI and matching accuracy are computed per draw and averaged.

    Returns
    -------
    scores : list of (float, float)
        Mean ``(nmi, accuracy)`` per depth, coarsest first.
    trace : ChainTrace
    """
    shape = NetworkShape(shape or [len(np.unique(lab)) for lab in data.labels] + [data.X.shape[1]])
    trace = run_chain(data.X, shape, config)
    per_draw = []
    for rec in trace.records:
        pred = hierarchy_labels(rec.A)
        per_draw.append([community_metrics(pred[d], data.labels[d]) for d in range(shape.K)])
    scores = [tuple(float(v) for v in s) for s in np.mean(np.array(per_draw), axis=0)]
    return scores, trace


def spectral_only(X, shape, S, seed=0):
    return multilayer_init(np.asarray(X).mean(axis=0), shape, S, seed=seed)
