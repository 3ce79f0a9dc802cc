"""Post-sampling tools: WAIC, convergence checks, relabeling and summaries.

Everything here works on finished :class:`~mplex.gibbs.ChainTrace` objects
or plain arrays and never mutates its input.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from scipy.stats import rankdata

from .gibbs import ChainTrace, EdgeMask
from .model import decode_adjacency, encode_adjacency, from_upper_bits, n_pairs, upper_bits

__all__ = [
    "ACTIVE_WINDOW",
    "WaicResult",
    "Diagnostic",
    "waic",
    "gelman_rubin",
    "geweke",
    "column_permutation",
    "permute_layer",
    "relabel",
    "RunningMoments",
    "ParamSummary",
    "PosteriorSummary",
    "posterior_summaries",
    "latent_means",
    "active_entries",
    "ClusterAssignment",
    "cluster_individuals",
    "predict_missing",
    "auc",
    "nmi",
    "label_accuracy",
    "community_metrics",
    "hierarchy_labels",
    "mode_A",
]

ACTIVE_WINDOW = (0.01, 0.99)


class WaicResult(NamedTuple):
    waic: float
    lppd: float
    p_waic: float


class Diagnostic(NamedTuple):
    """A diagnostic value plus a flag raised when it was computed from
    degenerate (zero-variance) input."""

    value: float
    degenerate: bool


# ---------------------------------------------------------------------------
# model comparison and convergence


def waic(L):
    """WAIC from a ``T x N`` matrix of per-draw, per-individual log-likelihoods.

    ``lppd = sum_n log mean_t exp(L[t, n])`` and ``p_waic`` sums the sample
    variances (``ddof=1``) of each column; with a single draw it is 0.

    Returns
    -------
    WaicResult
        ``waic = -2 * (lppd - p_waic)``.
    """
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] < 1:
        raise ValueError("expected a T x N matrix with T >= 1")
    if not np.all(np.isfinite(L)):
        raise ValueError("log-likelihoods must be finite")
    T = L.shape[0]
    lppd = float(np.sum(logsumexp(L, axis=0) - np.log(T)))
    p = float(np.sum(np.var(L, axis=0, ddof=1))) if T > 1 else 0.0
    return WaicResult(-2.0 * (lppd - p), lppd, p)


def gelman_rubin(chains):
    """Potential scale reduction factor of ``M >= 2`` equal-length traces.

    With within-chain variance ``W`` and between-chain variance ``B``
    (``L`` times the variance of chain means),
    ``R = sqrt(((L-1)/L W + B/L) / W)``.

    When ``W = 0`` the ratio is undefined: the result is 1 if the chains
    also agree with each other, and ``inf`` if they sit at different
    constants; the degeneracy flag is set either way.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two chains as an M x L array")
    L = x.shape[1]
    if L < 4:
        raise ValueError("chains must have length >= 4")
    W = float(np.mean(np.var(x, axis=1, ddof=1)))
    B = float(L * np.var(x.mean(axis=1), ddof=1))
    if W <= 0.0:
        return Diagnostic(1.0 if B <= 0.0 else np.inf, True)
    return Diagnostic(float(np.sqrt(((L - 1) / L * W + B / L) / W)), False)


def _batch_mean_var(x, n_batches):
    """Variance of the mean of ``x`` estimated from non-overlapping batch means."""
    b = max(len(x) // n_batches, 1)
    m = min(n_batches, len(x) // b)
    means = x[: m * b].reshape(m, b).mean(axis=1)
    return float(np.var(means, ddof=1) / m) if m > 1 else 0.0


def geweke(trace, first_frac=0.1, last_frac=0.5, n_batches=10):
    """Geweke z-score comparing the start and the end of a trace.

    Window variances come from batch means (``n_batches`` batches, fewer
    when a window is shorter than that).
    """
    x = np.asarray(trace, dtype=np.float64).ravel()
    n = x.size
    if n < 20:
        raise ValueError("trace must have length >= 20")
    if not (0 < first_frac and 0 < last_frac and first_frac + last_frac <= 1):
        raise ValueError("bad window fractions")
    a = x[: int(first_frac * n)]
    b = x[n - int(last_frac * n):]
    var = _batch_mean_var(a, n_batches) + _batch_mean_var(b, n_batches)
    diff = float(a.mean() - b.mean())
    if var <= 0.0:
        return Diagnostic(0.0 if diff == 0.0 else float(np.copysign(np.inf, diff)), True)
    return Diagnostic(diff / np.sqrt(var), False)


# ---------------------------------------------------------------------------
# label switching


def column_permutation(A, ref):
    """Permutation ``perm`` minimising the Hamming distance between
    ``A[:, perm]`` and ``ref``.  Among optimal permutations the one moving the
    fewest columns wins, so an already-aligned matrix keeps the identity."""
    A = np.asarray(A, dtype=np.int64)
    ref = np.asarray(ref, dtype=np.int64)
    q = A.shape[1]
    # ham[a, b]: distance between column a of A and column b of ref
    ham = (A[:, :, None] != ref[:, None, :]).sum(axis=0)
    cost = ham * (q + 1) + (1 - np.eye(q, dtype=np.int64))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(q, dtype=np.int64)
    perm[cols] = rows
    return perm


def _permute_codes(codes, perm):
    X = decode_adjacency(codes, len(perm))
    return encode_adjacency(X[..., perm[:, None], perm[None, :]])


def permute_layer(record, k, perm):
    """Relabel the nodes of latent layer ``k`` in one trace record.

    New node ``b`` is old node ``perm[b]``.  Touches the columns of
    ``A_{k+1}``, the rows of ``A_k``, rows and columns of ``Gamma_{k+1}``
    and either ``nu`` with the ``X_0`` codes (``k = 0``) or the stored
    ``X_k`` bits.
    """
    perm = np.asarray(perm, dtype=np.int64)
    if np.array_equal(perm, np.arange(len(perm))):
        return record
    A = list(record.A)
    A[k] = A[k][:, perm]
    if k > 0:
        A[k - 1] = A[k - 1][perm, :]
    Gamma = list(record.Gamma)
    Gamma[k] = Gamma[k][np.ix_(perm, perm)]
    changes = dict(A=tuple(A), Gamma=tuple(Gamma))
    p = len(perm)
    if k == 0:
        if n_pairs(p):
            remap = _permute_codes(np.arange(len(record.nu)), perm)
            nu = np.empty_like(record.nu)
            nu[remap] = record.nu
            changes["nu"] = nu
            if record.x0 is not None:
                changes["x0"] = remap[record.x0]
    elif record.latents is not None:
        lat = list(record.latents)
        X = from_upper_bits(lat[k - 1], p)
        lat[k - 1] = upper_bits(X[:, perm[:, None], perm[None, :]])
        changes["latents"] = tuple(lat)
    return dataclasses.replace(record, **changes)


def relabel(trace: ChainTrace, reference=None) -> ChainTrace:
    """Align every recorded state to a reference state.

    Layers are handled from the observed end down: the nodes of layer
    ``K - 1`` are matched by comparing columns of ``A_K`` (whose rows are
    observed nodes and never move), then layer ``K - 2`` through the
    now-aligned rows of ``A_{K-1}``, and so on.  The reference defaults to
    the first record.  Relabeling an aligned trace changes nothing.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    ref = trace.records[0] if reference is None else reference
    out = []
    for rec in trace.records:
        for k in range(trace.shape.K - 1, -1, -1):
            perm = column_permutation(rec.A[k], ref.A[k])
            rec = permute_layer(rec, k, perm)
        out.append(rec)
    return ChainTrace(trace.shape, trace.config, out, trace.mask, trace.anomalies)


# ---------------------------------------------------------------------------
# summaries


class RunningMoments:
    """Streaming mean and variance (Welford) of equally shaped arrays."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self._m2 = None

    def push(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.n += 1
        if self.mean is None:
            self.mean = x.copy()
            self._m2 = np.zeros_like(x)
            return
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + delta * (x - self.mean)

    @property
    def var(self):
        if self.n < 2:
            return np.zeros_like(self.mean)
        return self._m2 / (self.n - 1)


@dataclass(frozen=True, eq=False)
class ParamSummary:
    mean: np.ndarray
    sd: np.ndarray
    quantiles: dict

    def to_dict(self):
        return {
            "mean": np.asarray(self.mean).tolist(),
            "sd": np.asarray(self.sd).tolist(),
            "quantiles": {str(q): np.asarray(v).tolist() for q, v in self.quantiles.items()},
        }


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Per-parameter summaries keyed ``C``, ``Gamma_k``, ``A_k`` and ``nu``,
    plus latent posterior means (``xbar[k]`` is ``N x n_pairs(p_k)``)."""

    params: dict
    xbar: tuple
    n_draws: int


def _summ(draws, probs):
    draws = np.asarray(draws, dtype=np.float64)
    sd = draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros(draws.shape[1:])
    qs = {q: np.quantile(draws, q, axis=0) for q in probs}
    return ParamSummary(draws.mean(axis=0), sd, qs)


def latent_means(trace):
    """Posterior mean of every latent upper-triangular entry, per layer.

    Returns a tuple with one ``N x n_pairs(p_k)`` array for each latent
    layer ``k = 0 .. K-1``, or ``None`` if latents were not recorded.
    """
    recs = trace.records
    if not recs or recs[0].x0 is None:
        return None
    p0 = trace.shape.p[0]
    out = [np.mean([upper_bits(decode_adjacency(r.x0, p0)) for r in recs], axis=0)]
    for k in range(1, trace.shape.K):
        out.append(np.mean([r.latents[k - 1] for r in recs], axis=0))
    return tuple(out)


def posterior_summaries(trace, probs=(0.025, 0.5, 0.975)):
    """Mean, sd and quantiles of every sampled parameter, and latent means."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    params = {"C": _summ(trace.C, probs), "nu": _summ(trace.nu, probs)}
    for k in range(1, trace.shape.K + 1):
        params[f"Gamma_{k}"] = _summ(trace.gamma(k), probs)
        params[f"A_{k}"] = _summ(trace.A(k), probs)
    return PosteriorSummary(params, latent_means(trace), len(trace))


def mode_A(trace, k):
    """Most frequent ``A_k`` in the trace (first occurrence breaks ties)."""
    draws = trace.A(k)
    flat = draws.reshape(len(draws), -1)
    uniq, first, counts = np.unique(flat, axis=0, return_index=True, return_counts=True)
    best = np.flatnonzero(counts == counts.max())
    pick = best[np.argmin(first[best])]
    return uniq[pick].reshape(draws.shape[1:]).astype(np.int8), counts[pick] / len(draws)


# ---------------------------------------------------------------------------
# clustering individuals


def active_entries(xbars, window=ACTIVE_WINDOW):
    """Columns whose grand mean lies strictly inside ``window``."""
    g = np.asarray(xbars, dtype=np.float64).mean(axis=0)
    return np.flatnonzero((g > window[0]) & (g < window[1]))


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    """Binary codes ``z[n] = 1{xbar[n] > thresholds}``; ``labels`` reads each
    code as an integer with the first entry most significant."""

    z: np.ndarray
    thresholds: np.ndarray
    labels: np.ndarray
    entries: np.ndarray


def cluster_individuals(xbars, thresholds=None, entries=None):
    """Split individuals by thresholding their latent posterior means.

    Parameters
    ----------
    xbars : ndarray, shape (N, L)
    thresholds : ndarray, optional
        Defaults to the per-column median over individuals.
    entries : array of int, optional
        Columns to use; all by default.  See :func:`active_entries`.
    """
    xbars = np.atleast_2d(np.asarray(xbars, dtype=np.float64))
    entries = np.arange(xbars.shape[1]) if entries is None else np.asarray(entries, dtype=np.int64)
    if entries.size < 1:
        raise ValueError("need at least one entry")
    x = xbars[:, entries]
    m = np.median(x, axis=0) if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    z = (x > m).astype(np.int8)
    weights = 1 << np.arange(z.shape[1] - 1, -1, -1, dtype=np.int64)
    return ClusterAssignment(z, m, z.astype(np.int64) @ weights, entries)


# ---------------------------------------------------------------------------
# missing edges


def predict_missing(trace, mask):
    """Posterior probability of an edge at each masked position, in the
    order of ``mask.positions``."""
    if trace.mask is None:
        raise ValueError("trace was not run with a mask")
    if not isinstance(mask, EdgeMask):
        mask = EdgeMask(mask)
    if list(map(tuple, trace.mask.positions)) != list(map(tuple, mask.positions)):
        raise ValueError("mask does not match the one used for the trace")
    imputed = [r.imputed for r in trace.records if r.imputed is not None]
    if not imputed:
        raise ValueError("no imputations recorded")
    return np.mean(imputed, axis=0)


def auc(labels, scores):
    """Area under the ROC curve via the Mann-Whitney statistic; ties count half."""
    labels = np.asarray(labels).astype(bool).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if labels.shape != scores.shape:
        raise ValueError("labels and scores differ in length")
    n1 = int(labels.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("need both classes")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


# ---------------------------------------------------------------------------
# community recovery


def _contingency(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(a, b):
    """Normalized mutual information, natural logs, arithmetic-mean
    normalization.  Two single-cluster labelings count as identical (1)."""
    table = _contingency(a, b)
    n = table.sum()
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))[nz] / n**2
    mi = float(np.sum(pij * np.log(pij / outer)))
    return max(0.0, min(1.0, mi / (0.5 * (ha + hb))))


def label_accuracy(pred, true):
    """Fraction of matching labels under the best one-to-one relabeling."""
    table = _contingency(pred, true)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def community_metrics(pred_labels, true_labels):
    """``(nmi, accuracy)`` of a predicted labeling."""
    return nmi(pred_labels, true_labels), label_accuracy(pred_labels, true_labels)


def hierarchy_labels(A):
    """Community label of every observed node at each coarser level.

    ``A`` lists ``A_1 .. A_K``.  The label at level ``k`` is the argmax of
    the node's row in ``A_K A_{K-1} ... A_{k+1}``.  Returns a list ordered
    from level 0 (coarsest) to ``K - 1``.
    """
    K = len(A)
    M = np.eye(A[-1].shape[0], dtype=np.int64)
    out = [None] * K
    for k in range(K - 1, -1, -1):
        M = M @ np.asarray(A[k], dtype=np.int64)
        out[k] = np.argmax(M, axis=1)
    return out
