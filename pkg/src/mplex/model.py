"""Layered generative model for populations of binary networks.

A draw consists of symmetric binary adjacency matrices ``X_0, ..., X_K``
with unit diagonals.  The coarsest layer ``X_0`` is drawn from a
categorical distribution over all of its configurations; every finer
layer is drawn edge by edge, given the layer above, from a logistic model
whose log-odds for the pair ``(i, j)`` at layer ``k`` are::

    psi = C_k + a_i^T (Gamma_k * X_{k-1}) a_j

where ``a_i`` is row ``i`` of the binary connection matrix ``A_k`` and
``*`` is the elementwise product.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

__all__ = [
    "NEG_INF",
    "ENUMERATION_BUDGET",
    "NetworkShape",
    "Truncation",
    "ModelParams",
    "LayeredSample",
    "n_pairs",
    "pair_index",
    "encode_adjacency",
    "decode_adjacency",
    "all_adjacency",
    "upper_bits",
    "from_upper_bits",
    "softplus",
    "logit_edge",
    "logit_matrix",
    "edge_prob",
    "log_edge_prob",
    "log_joint",
    "loglik_layer",
    "marginal_loglik_obs",
    "simulate",
    "stack_layers",
    "generate_hsbm",
    "HSBMData",
]

#: Log-density assigned to impossible configurations.
NEG_INF = -np.inf
#: Largest number of joint latent configurations exact enumeration accepts.
ENUMERATION_BUDGET = 2**20


@dataclass(frozen=True)
class NetworkShape:
    """Number of nodes at each layer, coarsest first.

    Parameters
    ----------
    p : sequence of int
        ``p[k]`` nodes at layer ``k``; length ``K + 1`` with ``K >= 1``.
    """

    p: tuple

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        object.__setattr__(self, "p", p)
        if len(p) < 2:
            raise ValueError("a network needs at least two layers (K >= 1)")
        if p[0] < 2:
            raise ValueError("the top layer needs at least two nodes")
        if any(b < a for a, b in zip(p, p[1:])):
            raise ValueError(f"layer widths must be non-decreasing, got {p}")

    @property
    def K(self) -> int:
        return len(self.p) - 1

    def __iter__(self):
        return iter(self.p)

    def __getitem__(self, k):
        return self.p[k]


@dataclass(frozen=True)
class Truncation:
    """Optional closed intervals for the continuous parameters.

    ``None`` means unbounded on that side.  Entries of ``Gamma`` are always
    kept strictly positive regardless of ``gamma_lo``/``delta_lo``.
    """

    C_lo: float | None = None
    C_hi: float | None = None
    gamma_lo: float | None = None
    gamma_hi: float | None = None
    delta_lo: float | None = None
    delta_hi: float | None = None

    def interval(self, which):
        lo = getattr(self, f"{which}_lo")
        hi = getattr(self, f"{which}_hi")
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise ValueError(f"empty truncation interval for {which}: [{lo}, {hi}]")
        return lo, hi


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Connection matrices and continuous parameters of the model.

    Attributes
    ----------
    A : tuple of ndarray
        ``A[k-1]`` is the ``p_k x p_{k-1}`` binary connection matrix.
    C : ndarray, shape (K,)
        Per-layer intercepts.
    Gamma : tuple of ndarray
        ``Gamma[k-1]`` is the symmetric positive ``p_{k-1} x p_{k-1}`` matrix.
    nu : ndarray
        Probabilities of the top-layer configurations, in canonical order.
    truncation : Truncation or None
    """

    A: tuple
    C: np.ndarray
    Gamma: tuple
    nu: np.ndarray
    truncation: Truncation | None = None

    def __post_init__(self):
        A = tuple(np.asarray(a, dtype=np.int8) for a in self.A)
        G = tuple(np.asarray(g, dtype=np.float64) for g in self.Gamma)
        C = np.asarray(self.C, dtype=np.float64).reshape(-1)
        nu = np.asarray(self.nu, dtype=np.float64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "nu", nu)
        K = len(A)
        if K < 1 or len(G) != K or C.size != K:
            raise ValueError("A, Gamma and C must all have one entry per layer")
        for k, (a, g) in enumerate(zip(A, G), start=1):
            if a.ndim != 2 or g.shape != (a.shape[1], a.shape[1]):
                raise ValueError(f"layer {k}: Gamma must be square with side A.shape[1]")
            if not np.all((a == 0) | (a == 1)):
                raise ValueError(f"layer {k}: A must be binary")
            if not np.allclose(g, g.T):
                raise ValueError(f"layer {k}: Gamma must be symmetric")
            if k > 1 and a.shape[1] != A[k - 2].shape[0]:
                raise ValueError(f"layer {k}: A has {a.shape[1]} columns, expected {A[k - 2].shape[0]}")
        if nu.size != 2 ** n_pairs(A[0].shape[1]):
            raise ValueError("nu must have one entry per top-layer configuration")

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape((self.A[0].shape[1],) + tuple(a.shape[0] for a in self.A))

    @property
    def K(self) -> int:
        return len(self.A)

    def check_support(self, sparsity=None, atol=1e-9):
        """Raise ``ValueError`` if any parameter lies outside its space."""
        if np.any(self.nu < 0) or abs(self.nu.sum() - 1.0) > atol:
            raise ValueError("nu must be a probability vector")
        for k, g in enumerate(self.Gamma, start=1):
            if np.any(g <= 0):
                raise ValueError(f"Gamma_{k} must be entrywise positive")
        if sparsity is not None:
            for k, a in enumerate(self.A, start=1):
                rs = a.sum(axis=1)
                if rs.min() < 1 or rs.max() > sparsity:
                    raise ValueError(f"A_{k} row sums must lie in [1, {sparsity}]")
        t = self.truncation
        if t is not None:
            lo, hi = t.interval("C")
            if np.any(self.C < lo) or np.any(self.C > hi):
                raise ValueError("C outside its truncation interval")
            for g in self.Gamma:
                d = np.diag(g)
                off = g[~np.eye(len(g), dtype=bool)]
                lo, hi = t.interval("gamma")
                if np.any(d < lo) or np.any(d > hi):
                    raise ValueError("diagonal of Gamma outside truncation interval")
                lo, hi = t.interval("delta")
                if np.any(off < lo) or np.any(off > hi):
                    raise ValueError("off-diagonal of Gamma outside truncation interval")


@dataclass(frozen=True, eq=False)
class LayeredSample:
    """Adjacency matrices of one individual at every layer.

    ``X[k]`` is ``p_k x p_k``, symmetric, binary, with ones on the diagonal.
    Only the last layer is observed in real data; the others are latent.
    """

    X: tuple
    latent: tuple = field(default=None)

    def __post_init__(self):
        X = tuple(np.asarray(x, dtype=np.int8) for x in self.X)
        for k, x in enumerate(X):
            if x.ndim != 2 or x.shape[0] != x.shape[1]:
                raise ValueError(f"layer {k} is not square")
            if not np.array_equal(x, x.T) or not np.all(np.diag(x) == 1):
                raise ValueError(f"layer {k} must be symmetric with unit diagonal")
        object.__setattr__(self, "X", X)
        if self.latent is None:
            object.__setattr__(self, "latent", tuple([True] * (len(X) - 1) + [False]))


# ---------------------------------------------------------------------------
# canonical indexing of configurations


def n_pairs(p: int) -> int:
    return p * (p - 1) // 2


def pair_index(p: int):
    """Row-major ``(i, j)`` index arrays of the strict upper triangle."""
    return np.triu_indices(p, 1)


def upper_bits(X):
    """Strict upper triangle of (a stack of) adjacency matrices, row-major."""
    X = np.asarray(X)
    iu = pair_index(X.shape[-1])
    return X[..., iu[0], iu[1]]


def from_upper_bits(bits, p):
    """Inverse of :func:`upper_bits`; works on stacks too."""
    bits = np.asarray(bits)
    out = np.zeros(bits.shape[:-1] + (p, p), dtype=np.int8)
    iu = pair_index(p)
    out[..., iu[0], iu[1]] = bits
    out[..., iu[1], iu[0]] = bits
    idx = np.arange(p)
    out[..., idx, idx] = 1
    return out


def _weights(p):
    m = n_pairs(p)
    return (1 << np.arange(m - 1, -1, -1, dtype=np.int64)) if m else np.zeros(0, np.int64)


def encode_adjacency(X):
    """Integer code of an adjacency matrix (or stack), lexicographic in the
    upper-triangular bit string: the first pair is the most significant bit."""
    X = np.asarray(X)
    p = X.shape[-1]
    if n_pairs(p) > 62:
        raise ValueError("configuration codes only supported up to 62 pairs")
    code = upper_bits(X).astype(np.int64) @ _weights(p)
    return int(code) if np.ndim(code) == 0 else code


def decode_adjacency(code, p):
    """Adjacency matrix (or stack) for an integer code; inverse of
    :func:`encode_adjacency`."""
    code = np.asarray(code, dtype=np.int64)
    bits = (code[..., None] & _weights(p)) != 0
    return from_upper_bits(bits.astype(np.int8), p)


def all_adjacency(p):
    """Every ``p x p`` configuration, stacked in canonical order."""
    m = n_pairs(p)
    if m > 24:
        raise ValueError(f"refusing to list 2^{m} configurations")
    return decode_adjacency(np.arange(2**m), p)


# ---------------------------------------------------------------------------
# edge model


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logit_edge(k, i, j, X_prev, A_k, C_k, Gamma_k):
    """Log-odds of an edge between nodes ``i`` and ``j`` of layer ``k``.

    Parameters
    ----------
    k : int
        Layer index (only used in error messages).
    i, j : int
        Distinct nodes of layer ``k``.
    X_prev : ndarray, shape (q, q)
        Adjacency matrix of layer ``k - 1``.
    A_k : ndarray, shape (p, q)
    C_k : float
    Gamma_k : ndarray, shape (q, q)

    Returns
    -------
    float
    """
    A_k = np.asarray(A_k)
    X_prev = np.asarray(X_prev)
    Gamma_k = np.asarray(Gamma_k)
    q = A_k.shape[1]
    if X_prev.shape != (q, q) or Gamma_k.shape != (q, q):
        raise ValueError(
            f"layer {k}: A has {q} columns but X_prev is {X_prev.shape} and Gamma is {Gamma_k.shape}"
        )
    if i == j:
        raise ValueError("logit_edge needs two distinct nodes")
    ai = A_k[i].astype(np.float64)
    aj = A_k[j].astype(np.float64)
    return float(C_k + ai @ (Gamma_k * X_prev) @ aj)


def logit_matrix(X_prev, A_k, C_k, Gamma_k):
    """All log-odds of layer ``k`` at once.

    ``X_prev`` may be a single matrix or a stack ``(N, q, q)``; the result
    has matching leading dimensions.  The diagonal is meaningless.
    """
    A = np.asarray(A_k, dtype=np.float64)
    W = np.asarray(Gamma_k, dtype=np.float64) * np.asarray(X_prev, dtype=np.float64)
    return C_k + A @ W @ A.T


def edge_prob(psi):
    """Logistic function, stable for large ``|psi|``; NaN raises."""
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(np.isnan(psi)):
        raise ValueError("edge_prob received NaN")
    # two-branch form keeps tiny probabilities subnormal instead of zero
    e = np.exp(-np.abs(psi))
    out = np.where(psi >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return float(out) if out.ndim == 0 else out


def log_edge_prob(psi):
    """``log edge_prob(psi)``, finite for every finite ``psi``."""
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(np.isnan(psi)):
        raise ValueError("log_edge_prob received NaN")
    out = -softplus(-psi)
    return float(out) if out.ndim == 0 else out


def loglik_layer(X, psi, observed=None):
    """Sum over ``i < j`` of Bernoulli log-likelihoods of ``X`` given logits.

    Works on single matrices or stacks; sums over the last two axes.
    ``observed`` optionally masks out pairs (``False`` = excluded).
    """
    X = np.asarray(X, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    iu = pair_index(X.shape[-1])
    x = X[..., iu[0], iu[1]]
    s = psi[..., iu[0], iu[1]]
    term = x * s - softplus(s)
    if observed is not None:
        term = np.where(np.asarray(observed)[..., iu[0], iu[1]], term, 0.0)
    return term.sum(axis=-1)


def _log_nu(nu, code):
    v = nu[code]
    with np.errstate(divide="ignore"):
        return np.log(v)


def log_joint(sample, A, theta=None):
    """Joint log-density of one individual's full layered sample.

    Parameters
    ----------
    sample : LayeredSample or sequence of ndarray
    A : ModelParams or sequence of ndarray
        Either a full parameter object (then ``theta`` is omitted) or the
        connection matrices, with ``theta`` a ModelParams supplying the rest.

    Returns
    -------
    float
        ``NEG_INF`` when the top-layer configuration has zero probability.
    """
    params = A if isinstance(A, ModelParams) else theta
    if params is None:
        raise TypeError("log_joint needs model parameters")
    conn = params.A if isinstance(A, ModelParams) else tuple(A)
    X = sample.X if isinstance(sample, LayeredSample) else tuple(sample)
    if len(X) != len(conn) + 1:
        raise ValueError("sample depth does not match the number of layers")
    out = float(_log_nu(params.nu, encode_adjacency(X[0])))
    if out == NEG_INF:
        return NEG_INF
    for k in range(1, len(X)):
        psi = logit_matrix(X[k - 1], conn[k - 1], params.C[k - 1], params.Gamma[k - 1])
        out += float(loglik_layer(X[k], psi))
    return out


def marginal_loglik_obs(X_K, params, observed=None, budget=ENUMERATION_BUDGET):
    """Exact log-probability of an observed bottom layer, latent layers summed out.

    Parameters
    ----------
    X_K : ndarray, shape (p_K, p_K)
    params : ModelParams
    observed : ndarray of bool, optional
        Pairs of ``X_K`` to include; excluded pairs are marginalised.
    budget : int
        Maximum number of joint latent configurations.

    Returns
    -------
    float

    Notes
    -----
    The sum is organised layer by layer (a backward recursion), so the cost
    is far below the joint count, but the budget still applies to the joint
    count to keep this strictly a small-model oracle.
    """
    shape = params.shape
    total = 1
    for p in shape.p[:-1]:
        total *= 2 ** n_pairs(p)
        if total > budget:
            raise ValueError(
                f"{total}+ latent configurations exceed the enumeration budget of {budget}; "
                "use MCMC-based estimates (e.g. WAIC from a Gibbs chain) instead"
            )
    K = shape.K
    # message[c] = log P(X_K | X_{k} = config c) for the current layer k
    configs = all_adjacency(shape.p[K - 1])
    psi = logit_matrix(configs, params.A[K - 1], params.C[K - 1], params.Gamma[K - 1])
    msg = loglik_layer(np.asarray(X_K), psi, observed)
    for k in range(K - 1, 0, -1):
        parents = all_adjacency(shape.p[k - 1])
        psi = logit_matrix(parents, params.A[k - 1], params.C[k - 1], params.Gamma[k - 1])
        msg = np.array([logsumexp(loglik_layer(configs, row) + msg) for row in psi])
        configs = parents
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(params.nu) + msg))


# ---------------------------------------------------------------------------
# simulation


def simulate(shape, A, theta=None, N=1, seed=0, as_samples=True):
    """Ancestral draws from the model.

    Parameters
    ----------
    shape : NetworkShape or sequence of int
    A : ModelParams or sequence of ndarray
        As in :func:`log_joint`.
    theta : ModelParams, optional
    N : int
    seed : int
    as_samples : bool
        Return a list of :class:`LayeredSample` (default) or, when false,
        a list with one ``(N, p_k, p_k)`` int8 stack per layer.
    """
    shape = shape if isinstance(shape, NetworkShape) else NetworkShape(shape)
    params = A if isinstance(A, ModelParams) else theta
    conn = params.A if isinstance(A, ModelParams) else tuple(np.asarray(a) for a in A)
    if params.shape.p != shape.p:
        raise ValueError(f"parameters have shape {params.shape.p}, expected {shape.p}")
    rng = np.random.default_rng(seed)
    nu = params.nu / params.nu.sum()
    codes = rng.choice(nu.size, size=N, p=nu)
    layers = [decode_adjacency(codes, shape.p[0])]
    for k in range(1, shape.K + 1):
        psi = logit_matrix(layers[-1], conn[k - 1], params.C[k - 1], params.Gamma[k - 1])
        prob = upper_bits(expit(psi))
        bits = (rng.random(prob.shape) < prob).astype(np.int8)
        layers.append(from_upper_bits(bits, shape.p[k]))
    if not as_samples:
        return layers
    return [LayeredSample(tuple(layer[n] for layer in layers)) for n in range(N)]


def stack_layers(samples: Sequence[LayeredSample]):
    """Turn a list of samples into one ``(N, p_k, p_k)`` stack per layer."""
    depth = len(samples[0].X)
    return [np.stack([s.X[k] for s in samples]) for k in range(depth)]


@dataclass(frozen=True, eq=False)
class HSBMData:
    """Output of :func:`generate_hsbm`.

    Attributes
    ----------
    X : ndarray, shape (N, p, p)
        Observed adjacency matrices.
    labels : list of ndarray
        ``labels[d]`` assigns each node to its community at tree depth
        ``d + 1`` (coarsest first).
    prob : ndarray, shape (p, p)
        The edge probability matrix shared by all ``N`` draws.
    """

    X: np.ndarray
    labels: list
    prob: np.ndarray


DEFAULT_HSBM_RANGES = {0: (0.0, 0.1), 1: (0.4, 0.5), 2: (0.7, 0.8)}


def generate_hsbm(tree=(3, 9, 27), prob_ranges=None, N=1, seed=0):
    """Draw networks from a hierarchical stochastic block model.

    Parameters
    ----------
    tree : sequence of int
        Number of groups at each depth, coarsest first, ending with the
        number of nodes.  Each entry must divide the next, giving a
        balanced nested partition, e.g. ``(3, 9, 27)``.
    prob_ranges : dict, optional
        Maps the depth of the deepest shared ancestor (0 = none shared) to a
        ``(low, high)`` uniform range.  Defaults to ``{0: (0, 0.1),
        1: (0.4, 0.5), 2: (0.7, 0.8)}``.
    N : int
    seed : int

    Returns
    -------
    HSBMData
    """
    tree = tuple(int(t) for t in tree)
    if len(tree) < 2 or any(t < 1 for t in tree):
        raise ValueError(f"malformed community tree {tree}")
    for a, b in zip(tree, tree[1:]):
        if b % a or b < a:
            raise ValueError(f"malformed community tree {tree}: {a} does not split {b} evenly")
    ranges = dict(DEFAULT_HSBM_RANGES if prob_ranges is None else prob_ranges)
    depth = len(tree) - 1
    if set(ranges) != set(range(depth + 1)):
        raise ValueError(f"need probability ranges for depths 0..{depth}")
    for lo, hi in ranges.values():
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"bad probability range ({lo}, {hi})")
    p = tree[-1]
    nodes = np.arange(p)
    labels = [nodes // (p // g) for g in tree[:-1]]
    shared = np.zeros((p, p), dtype=int)
    for lab in labels:
        shared += lab[:, None] == lab[None, :]
    rng = np.random.default_rng(seed)
    lo = np.vectorize(lambda d: ranges[d][0])(shared)
    hi = np.vectorize(lambda d: ranges[d][1])(shared)
    u = rng.random((p, p))
    prob = np.triu(lo + (hi - lo) * u, 1)
    prob = prob + prob.T
    np.fill_diagonal(prob, 1.0)
    bits = (rng.random((N, n_pairs(p))) < upper_bits(prob)).astype(np.int8)
    return HSBMData(from_upper_bits(bits, p), labels, prob)
