"""Data-augmented Gibbs sampler for the layered network model.

Every logistic likelihood term is augmented with a Polya-Gamma variable
``omega ~ PG(1, psi)``, which makes the intercepts and the entries of
``Gamma`` conditionally Gaussian.  Discrete blocks (rows of ``A``, latent
adjacency matrices, and ``X_0``) are drawn from their exact conditionals
with ``omega`` integrated out.

One sweep visits, in order: ``X_0``; interior latent layers; rows of
``A``; ``omega``; ``C`` and ``Gamma``; ``nu``; masked observed entries.
``omega`` is refreshed right after the blocks that integrate it out and
right before the blocks that condition on it, which keeps the scan a
valid partially collapsed Gibbs sampler.

The subsampling sweep updates every latent quantity for all individuals
but draws ``A``, ``C``, ``Gamma`` and ``nu`` from conditionals whose data
sums run over a random subset ``B`` scaled by ``N / |B|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy.special import logsumexp, ndtr, ndtri

from . import _kernels as kern
from .model import (
    ModelParams,
    NetworkShape,
    Truncation,
    all_adjacency,
    encode_adjacency,
    logit_matrix,
    loglik_layer,
    n_pairs,
    upper_bits,
)

__all__ = [
    "SamplerConfig",
    "EdgeMask",
    "GibbsState",
    "TraceRecord",
    "ChainTrace",
    "NumericalError",
    "sample_truncnorm",
    "row_candidates",
    "gamma_index",
    "theta_conditional",
    "init_state",
    "update_omegas",
    "update_row_A",
    "update_layer_A",
    "update_C",
    "update_Gamma",
    "update_theta_layer",
    "update_nu",
    "update_X0",
    "update_X0_all",
    "update_Xk_entry",
    "update_interior_layer",
    "impute_masked",
    "sweep_standard",
    "sweep_subsampling",
    "run_chain",
    "bottom_loglik",
]

MAX_CANDIDATES = 100_000
MAX_TOP_NODES = 4


class NumericalError(RuntimeError):
    """A non-finite value appeared in the chain."""


@dataclass(frozen=True)
class SamplerConfig:
    """Prior hyperparameters and run schedule.

    Variances, not standard deviations, are given for the normal priors.
    ``subsample_size=None`` means all individuals.  ``burn_in`` counts
    sweeps from the very start (subsampling phase first), and states are
    recorded every ``thin`` sweeps afterwards.
    """

    mu_C: float = 0.0
    var_C: float = 1.0
    mu_gamma: float = 0.0
    var_gamma: float = 1.0
    mu_delta: float = 0.0
    var_delta: float = 1.0
    alpha: float = 1.0
    S: int = 2
    truncation: Truncation | None = None
    subsample_size: int | None = None
    subsample_iters: int = 0
    standard_iters: int = 100
    thin: int = 1
    burn_in: int = 0
    seed: int = 0
    omega_subset_only: bool = False
    warm_start_iters: int = 10
    record_latents: bool = True
    max_candidates: int = MAX_CANDIDATES

    def __post_init__(self):
        for name in ("var_C", "var_gamma", "var_delta", "alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.S < 1:
            raise ValueError("sparsity bound S must be at least 1")
        if self.subsample_size is not None and self.subsample_size < 1:
            raise ValueError("subsample size must be at least 1")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin must be >= 1 and burn_in >= 0")
        if self.subsample_iters < 0 or self.standard_iters < 0:
            raise ValueError("iteration counts must be non-negative")


class EdgeMask:
    """Missing positions ``(n, i, j)`` of the observed layer, stored with ``i < j``."""

    def __init__(self, positions=(), N=None, p=None):
        cleaned = set()
        for n, i, j in positions:
            n, i, j = int(n), int(i), int(j)
            if i == j:
                raise ValueError("diagonal entries cannot be masked")
            i, j = min(i, j), max(i, j)
            if n < 0 or i < 0 or (N is not None and n >= N) or (p is not None and j >= p):
                raise ValueError(f"masked position {(n, i, j)} out of bounds")
            cleaned.add((n, i, j))
        self.positions = tuple(sorted(cleaned))

    def __len__(self):
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)

    def observed(self, N, p):
        """uint8 array ``(N, p, p)``: 1 where observed, 0 where masked."""
        obs = np.ones((N, p, p), dtype=np.uint8)
        for n, i, j in self.positions:
            if n >= N or j >= p:
                raise ValueError(f"masked position {(n, i, j)} out of bounds")
            obs[n, i, j] = obs[n, j, i] = 0
        return obs

    @classmethod
    def random(cls, N, p, fraction, seed):
        """Mask a uniformly random ``fraction`` of all ``N * p(p-1)/2`` pairs."""
        rng = np.random.default_rng(seed)
        iu = np.triu_indices(p, 1)
        total = N * len(iu[0])
        pick = rng.choice(total, size=int(round(fraction * total)), replace=False)
        n, m = np.divmod(pick, len(iu[0]))
        return cls(zip(n, iu[0][m], iu[1][m]), N, p)


@dataclass(eq=False)
class GibbsState:
    """Mutable state of one chain.  Update functions modify it in place and
    also return it.

    Attributes
    ----------
    A, C, Gamma, nu
        Current parameters (``A[k-1]`` for layer ``k``).
    X : list of ndarray
        ``X[k]`` has shape ``(N, p_k, p_k)``.  ``X[K]`` is the data, with
        masked entries holding the latest imputation.
    omega : list of ndarray
        ``omega[k-1]`` aligned with ``X[k]``; only ``i < j`` is used.
    obs : ndarray of uint8 or None
        Observation mask for ``X[K]``.
    subset, scale
        Individuals entering parameter updates and their weight.
    """

    shape: NetworkShape
    config: SamplerConfig
    A: list
    C: np.ndarray
    Gamma: list
    nu: np.ndarray
    X: list
    omega: list
    obs: np.ndarray | None
    rng: np.random.Generator
    subset_rng: np.random.Generator
    subset: np.ndarray = None
    scale: float = 1.0
    anomalies: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __post_init__(self):
        if self.subset is None:
            self.subset = np.arange(self.N)

    @property
    def N(self):
        return self.X[-1].shape[0]

    @property
    def K(self):
        return self.shape.K

    def params(self) -> ModelParams:
        return ModelParams(tuple(a.copy() for a in self.A), self.C.copy(),
                           tuple(g.copy() for g in self.Gamma), self.nu.copy(),
                           self.config.truncation)

    def psi(self, k):
        """Current logits of layer ``k`` for all individuals."""
        return logit_matrix(self.X[k - 1], self.A[k - 1], self.C[k - 1], self.Gamma[k - 1])

    def mask_args(self, k):
        if k == self.K and self.obs is not None:
            return self.obs, True
        return _NO_MASK, False

    def x0_codes(self):
        return np.asarray(encode_adjacency(self.X[0]), dtype=np.int64).reshape(-1)


_NO_MASK = np.ones((1, 1, 1), dtype=np.uint8)


# ---------------------------------------------------------------------------
# elementary distributions


def sample_truncnorm(mean, sd, lo=-np.inf, hi=np.inf, rng=None):
    """One draw from ``N(mean, sd^2)`` restricted to ``[lo, hi]``.

    Inverse-CDF sampling when the interval lies within 8 standard deviations
    of the mean, exponential rejection (Robert 1995) further out in a tail.
    """
    if not sd > 0 or not np.isfinite(mean):
        raise NumericalError(f"bad truncated normal parameters mean={mean}, sd={sd}")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    if not a < b:
        raise ValueError("empty truncation interval")
    flip = b < 0
    if flip:
        a, b = -b, -a
    if a > 8.0:
        z = _robert_tail(a, b, rng)
    elif a > 0:
        # right tail: invert the survival function, which stays accurate here
        sa = ndtr(-a)
        sb = ndtr(-b)
        z = -float(ndtri(sa - rng.random() * (sa - sb)))
    else:
        fa = ndtr(a)
        fb = ndtr(b)
        z = float(ndtri(fa + rng.random() * (fb - fa)))
    z = min(max(z, a), b)
    return float(mean + sd * (-z if flip else z))


def _robert_tail(a, b, rng):
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.exponential() / lam
        if z > b:
            continue
        if rng.random() <= math.exp(-0.5 * (z - lam) ** 2):
            return z


def row_candidates(q, S, cap=MAX_CANDIDATES):
    """All binary rows of length ``q`` with between 1 and ``S`` ones, as
    padded column-index lists (-1 fill).  Ordered by size, then
    lexicographically."""
    S = min(S, q)
    total = sum(comb(q, s) for s in range(1, S + 1))
    if total > cap:
        raise ValueError(f"{total} candidate rows exceed the cap of {cap}; lower S")
    out = -np.ones((total, S), dtype=np.int64)
    r = 0
    for s in range(1, S + 1):
        for cols in combinations(range(q), s):
            out[r, :s] = cols
            r += 1
    return out


def _cands_to_rows(cands, q):
    rows = np.zeros((len(cands), q), dtype=np.int8)
    for r, c in enumerate(cands):
        rows[r, c[c >= 0]] = 1
    return rows


def gamma_index(q):
    """``gidx[s, t]``: position of ``Gamma[s, t]`` in the parameter vector
    ``(C, Gamma_00, Gamma_01, ..., Gamma_11, ...)`` (upper triangle,
    row-major, diagonal included)."""
    g = np.zeros((q, q), dtype=np.int64)
    pos = 1
    for s in range(q):
        for t in range(s, q):
            g[s, t] = g[t, s] = pos
            pos += 1
    return g


def _sample_categorical(logw, u):
    # logw: (..., m); one uniform per leading index
    logw = np.asarray(logw, dtype=np.float64)
    m = logw.max(axis=-1, keepdims=True)
    w = np.exp(logw - m)
    cw = np.cumsum(w, axis=-1)
    target = np.asarray(u)[..., None] * cw[..., -1:]
    return np.minimum((cw <= target).sum(axis=-1), logw.shape[-1] - 1)


# ---------------------------------------------------------------------------
# state construction


def _as_data(data):
    X = np.asarray(data, dtype=np.int8)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError("data must be a stack of square adjacency matrices")
    return X


def representative_rows(A_k):
    """One row per column of ``A_k``, preferring the purest rows; used to
    seed parent-layer latents from child-layer data."""
    A_k = np.asarray(A_k)
    sizes = A_k.sum(axis=1)
    reps = []
    for s in range(A_k.shape[1]):
        rows = np.flatnonzero(A_k[:, s] == 1)
        if rows.size == 0:
            reps.append(None)
        else:
            reps.append(int(rows[np.argmin(sizes[rows])]))
    return reps


def _latents_from_rows(X_child, reps, rng):
    N = X_child.shape[0]
    q = len(reps)
    out = np.zeros((N, q, q), dtype=np.int8)
    for s in range(q):
        for t in range(s + 1, q):
            if reps[s] is None or reps[t] is None or reps[s] == reps[t]:
                v = (rng.random(N) < 0.5).astype(np.int8)
            else:
                v = X_child[:, reps[s], reps[t]]
            out[:, s, t] = out[:, t, s] = v
    idx = np.arange(q)
    out[:, idx, idx] = 1
    return out


def _prior_theta(shape, config, rng):
    t = config.truncation or Truncation()
    lo, hi = t.interval("C")
    C = np.array([sample_truncnorm(config.mu_C, math.sqrt(config.var_C), lo, hi, rng)
                  for _ in range(shape.K)])
    Gamma = []
    for k in range(1, shape.K + 1):
        q = shape.p[k - 1]
        g = np.zeros((q, q))
        for s in range(q):
            for u in range(s, q):
                which, mu, var = ("gamma", config.mu_gamma, config.var_gamma) if s == u else \
                    ("delta", config.mu_delta, config.var_delta)
                lo, hi = t.interval(which)
                g[s, u] = g[u, s] = sample_truncnorm(mu, math.sqrt(var), max(lo, 0.0), hi, rng)
        Gamma.append(g)
    nu = rng.dirichlet(np.full(2 ** n_pairs(shape.p[0]), config.alpha))
    return C, Gamma, nu


def init_state(data, shape, config, mask=None, init=None, latents=None):
    """Build the starting state of a chain.

    Parameters
    ----------
    data : array_like, shape (N, p_K, p_K)
    shape : NetworkShape or sequence of int
    config : SamplerConfig
    mask : EdgeMask or array_like of bool, optional
        Missing entries of the data (``True``/1 = observed for arrays).
    init : sequence of ndarray or object with ``A`` (and optionally
        ``selected``), optional
        Starting connection matrices.  ``None`` runs the spectral
        initialiser on the mean observed adjacency matrix.
    latents : list of ndarray, optional
        Starting latent stacks ``X_0 .. X_{K-1}``.  By default each parent
        layer copies the sub-adjacency of representative child rows.

    Notes
    -----
    ``C``, ``Gamma`` and ``nu`` start from a prior draw, followed by
    ``config.warm_start_iters`` Gibbs passes over (omega, C, Gamma, nu)
    alone so that the first full sweep starts from parameters that fit the
    initial latents.
    """
    shape = shape if isinstance(shape, NetworkShape) else NetworkShape(shape)
    X_K = _as_data(data).copy()
    N, p = X_K.shape[0], X_K.shape[1]
    if p != shape.p[-1]:
        raise ValueError(f"data has {p} nodes but the shape expects {shape.p[-1]}")
    if shape.p[0] > MAX_TOP_NODES:
        raise ValueError(f"top layer limited to {MAX_TOP_NODES} nodes "
                         f"({2 ** n_pairs(MAX_TOP_NODES)} configurations)")
    obs = None
    if mask is not None:
        if isinstance(mask, EdgeMask):
            obs = mask.observed(N, p) if len(mask) else None
        else:
            obs = np.asarray(mask).astype(np.uint8)
            if obs.shape != X_K.shape:
                raise ValueError("mask shape does not match the data")
            obs = np.minimum(obs, np.transpose(obs, (0, 2, 1)))
            if obs.all():
                obs = None
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[0])
    subset_rng = np.random.default_rng(seeds[1])

    selected = None
    if init is None:
        from .spectral import multilayer_init
        observed = X_K if obs is None else np.where(obs == 1, X_K, 0)
        counts = N if obs is None else obs.sum(axis=0)
        mean = observed.sum(axis=0) / np.maximum(counts, 1)
        np.fill_diagonal(mean, 1.0)
        si = multilayer_init(mean, shape, config.S)
        A = [np.asarray(a, dtype=np.int8).copy() for a in si.A]
        selected = si.selected
    else:
        A_src = init.A if hasattr(init, "A") else init
        A = [np.asarray(a, dtype=np.int8).copy() for a in A_src]
        selected = getattr(init, "selected", None)
    if len(A) != shape.K or any(a.shape != (shape.p[k + 1], shape.p[k]) for k, a in enumerate(A)):
        raise ValueError("initial connection matrices do not match the shape")
    if obs is not None:
        # masked entries start at a coin flip; they never enter the likelihood
        fill = (rng.random(X_K.shape) < 0.5).astype(np.int8)
        fill = np.triu(fill, 1)
        fill = fill + np.transpose(fill, (0, 2, 1))
        X_K = np.where(obs == 1, X_K, fill).astype(np.int8)

    if latents is None:
        X = [None] * (shape.K + 1)
        X[shape.K] = X_K
        for k in range(shape.K, 0, -1):
            reps = list(selected[k - 1]) if selected is not None else representative_rows(A[k - 1])
            X[k - 1] = _latents_from_rows(X[k], reps, rng)
    else:
        X = [np.asarray(x, dtype=np.int8).copy() for x in latents] + [X_K]
    C, Gamma, nu = _prior_theta(shape, config, rng)
    omega = [np.full((N, shape.p[k], shape.p[k]), 0.25) for k in range(1, shape.K + 1)]
    state = GibbsState(shape, config, A, C, Gamma, nu, X, omega, obs, rng, subset_rng)
    for _ in range(config.warm_start_iters):
        update_omegas(state)
        for k in range(1, shape.K + 1):
            update_theta_layer(state, k)
        update_nu(state)
    return state


# ---------------------------------------------------------------------------
# single-block updates


def update_omegas(state, individuals=None):
    """Redraw every observed ``omega`` from ``PG(1, psi)``."""
    ns = np.arange(state.N) if individuals is None else np.asarray(individuals, dtype=np.int64)
    for k in range(1, state.K + 1):
        psi = state.psi(k)
        obs, use = state.mask_args(k)
        kern.draw_omegas(psi, state.omega[k - 1], obs, use, ns, state.rng, state.anomalies)
    return state


def _candidates(state, k):
    q = state.shape.p[k - 1]
    return row_candidates(q, state.config.S, state.config.max_candidates)


def _row_logweights(state, k, i, R, cands):
    obs, use = state.mask_args(k)
    ll = kern.row_candidate_loglik(state.X[k], obs, use, R, float(state.C[k - 1]), cands, i,
                                   state.subset)
    return state.scale * ll


def _weighted_parent(state, k):
    W = state.Gamma[k - 1][None] * state.X[k - 1]
    return W


def row_A_logweights(state, k, i):
    """Normalised log-probabilities of every candidate for row ``i`` of ``A_k``,
    together with the candidate rows themselves."""
    cands = _candidates(state, k)
    W = _weighted_parent(state, k)
    R = np.ascontiguousarray(W @ state.A[k - 1].T.astype(np.float64))
    lw = _row_logweights(state, k, i, R, cands)
    return lw - logsumexp(lw), _cands_to_rows(cands, state.shape.p[k - 1])


def update_row_A(state, k, i):
    """Redraw row ``i`` of ``A_k`` from its categorical conditional."""
    cands = _candidates(state, k)
    W = _weighted_parent(state, k)
    R = np.ascontiguousarray(W @ state.A[k - 1].T.astype(np.float64))
    lw = _row_logweights(state, k, i, R, cands)
    c = int(_sample_categorical(lw, state.rng.random()))
    row = np.zeros(state.shape.p[k - 1], dtype=np.int8)
    row[cands[c][cands[c] >= 0]] = 1
    state.A[k - 1][i] = row
    return state


def update_layer_A(state, k):
    """Redraw every row of ``A_k`` in turn."""
    cands = _candidates(state, k)
    W = _weighted_parent(state, k)
    A = state.A[k - 1]
    R = np.ascontiguousarray(W @ A.T.astype(np.float64))
    for i in range(A.shape[0]):
        lw = _row_logweights(state, k, i, R, cands)
        c = int(_sample_categorical(lw, state.rng.random()))
        cols = cands[c][cands[c] >= 0]
        A[i] = 0
        A[i, cols] = 1
        R[:, :, i] = W[:, :, cols].sum(axis=2)
    return state


def _theta_vector(state, k):
    q = state.shape.p[k - 1]
    iu = np.triu_indices(q)
    return np.concatenate([[state.C[k - 1]], state.Gamma[k - 1][iu]])


def _theta_stats(state, k):
    q = state.shape.p[k - 1]
    obs, use = state.mask_args(k)
    return kern.theta_stats(state.X[k], state.X[k - 1], state.A[k - 1], state.omega[k - 1],
                            obs, use, state.subset, float(state.scale), gamma_index(q))


def _coordinate_prior(state, k, index):
    cfg = state.config
    t = cfg.truncation or Truncation()
    if index == 0:
        lo, hi = t.interval("C")
        return cfg.mu_C, cfg.var_C, lo, hi
    q = state.shape.p[k - 1]
    iu = np.triu_indices(q)
    s, u = iu[0][index - 1], iu[1][index - 1]
    if s == u:
        lo, hi = t.interval("gamma")
        return cfg.mu_gamma, cfg.var_gamma, max(lo, 0.0), hi
    lo, hi = t.interval("delta")
    return cfg.mu_delta, cfg.var_delta, max(lo, 0.0), hi


def _coordinate_moments(G, h, theta, index, mu0, var0):
    data_prec = G[index, index]
    if data_prec <= 0.0:
        # parameter not touched by any edge this sweep: the prior
        return mu0, var0
    prec = 1.0 / var0 + data_prec
    cross = G[index] @ theta - data_prec * theta[index]
    mean = (mu0 / var0 + h[index] - cross) / prec
    return mean, 1.0 / prec


def theta_conditional(state, k, index):
    """Mean and variance (before truncation) of the Gaussian conditional of
    coordinate ``index`` of ``(C_k, upper Gamma_k)`` given the current omega."""
    G, h = _theta_stats(state, k)
    mu0, var0, _, _ = _coordinate_prior(state, k, index)
    return _coordinate_moments(G, h, _theta_vector(state, k), index, mu0, var0)


def _set_theta(state, k, theta):
    q = state.shape.p[k - 1]
    state.C[k - 1] = theta[0]
    g = np.zeros((q, q))
    iu = np.triu_indices(q)
    g[iu] = theta[1:]
    state.Gamma[k - 1] = g + np.triu(g, 1).T


def _draw_coordinates(state, k, indices):
    G, h = _theta_stats(state, k)
    theta = _theta_vector(state, k)
    for index in indices:
        mu0, var0, lo, hi = _coordinate_prior(state, k, index)
        mean, var = _coordinate_moments(G, h, theta, index, mu0, var0)
        theta[index] = sample_truncnorm(mean, math.sqrt(var), lo, hi, state.rng)
    _set_theta(state, k, theta)
    return state


def update_C(state, k):
    """Redraw the intercept ``C_k``."""
    return _draw_coordinates(state, k, [0])


def update_Gamma(state, k, s, t):
    """Redraw ``Gamma_k[s, t]`` (and its mirror)."""
    return _draw_coordinates(state, k, [int(gamma_index(state.shape.p[k - 1])[s, t])])


def update_theta_layer(state, k):
    """``C_k`` then every upper-triangular entry of ``Gamma_k``, in order."""
    q = state.shape.p[k - 1]
    return _draw_coordinates(state, k, range(1 + q * (q + 1) // 2))


def update_nu(state):
    """Redraw ``nu`` from its Dirichlet conditional."""
    codes = state.x0_codes()[state.subset]
    counts = np.bincount(codes, minlength=state.nu.size).astype(np.float64)
    alpha = state.config.alpha + state.scale * counts
    nu = state.rng.dirichlet(alpha)
    # keep nu inside the open simplex even when a gamma draw underflows
    state.nu = np.maximum(nu, np.finfo(float).tiny)
    state.nu /= state.nu.sum()
    return state


def x0_logweights(state, individuals=None):
    """Unnormalised log-probabilities of each top-layer configuration for each
    individual, shape ``(len(individuals), 2^{p_0(p_0-1)/2})``."""
    p0 = state.shape.p[0]
    if p0 > MAX_TOP_NODES:
        raise ValueError(f"X_0 update needs p_0 <= {MAX_TOP_NODES}")
    ns = np.arange(state.N) if individuals is None else np.atleast_1d(individuals)
    configs = all_adjacency(p0)
    psi = upper_bits(logit_matrix(configs, state.A[0], state.C[0], state.Gamma[0]))
    sp = np.maximum(psi, 0) + np.log1p(np.exp(-np.abs(psi)))
    x = upper_bits(state.X[1][ns]).astype(np.float64)
    obs, use = state.mask_args(1)
    w = upper_bits(obs[ns]).astype(np.float64) if use else np.ones_like(x)
    with np.errstate(divide="ignore"):
        lognu = np.log(state.nu)
    return lognu[None, :] + (w * x) @ psi.T - w @ sp.T


def update_X0(state, n):
    """Redraw ``X_0`` of individual ``n``."""
    lw = x0_logweights(state, [n])[0]
    c = int(_sample_categorical(lw, state.rng.random()))
    state.X[0][n] = all_adjacency(state.shape.p[0])[c]
    return state


def update_X0_all(state):
    lw = x0_logweights(state)
    c = _sample_categorical(lw, state.rng.random(state.N))
    state.X[0][:] = all_adjacency(state.shape.p[0])[c]
    return state


def _interior_args(state, k):
    psik = np.ascontiguousarray(state.psi(k))
    psinext = np.ascontiguousarray(state.psi(k + 1))
    obs, use = state.mask_args(k + 1)
    ptr, us, vs, mult = kern.affected_pairs(state.A[k].astype(np.int64))
    return psik, psinext, obs, use, ptr, us, vs, mult


def interior_logodds(state, n, k, i, j):
    """Log-odds of ``X_k[n, i, j] = 1`` under its full conditional."""
    psik, psinext, obs, use, ptr, us, vs, mult = _interior_args(state, k)
    s, t = min(i, j), max(i, j)
    return kern.interior_conditional(n, s, t, state.X[k], psik, state.X[k + 1], psinext,
                                     state.Gamma[k], obs, use, ptr, us, vs, mult)


def update_Xk_entry(state, n, k, i, j):
    """Redraw the latent entry ``X_k[n, i, j]`` (``1 <= k <= K-1``)."""
    if not 1 <= k < state.K:
        raise ValueError("only interior layers 1..K-1 are latent entrywise")
    lo = interior_logodds(state, n, k, i, j)
    p1 = 1.0 / (1.0 + math.exp(-lo)) if lo >= 0 else math.exp(lo) / (1.0 + math.exp(lo))
    v = np.int8(state.rng.random() < p1)
    state.X[k][n, i, j] = state.X[k][n, j, i] = v
    return state


def update_interior_layer(state, k):
    psik, psinext, obs, use, ptr, us, vs, mult = _interior_args(state, k)
    kern.update_interior(state.X[k], psik, state.X[k + 1], psinext, state.Gamma[k], obs, use,
                         ptr, us, vs, mult, np.arange(state.N), state.rng)
    return state


def impute_masked(state):
    """Draw masked entries of the observed layer from their Bernoulli conditional."""
    if state.obs is None:
        return state
    K = state.K
    psi = state.psi(K)
    iu = np.triu_indices(state.shape.p[K], 1)
    miss = state.obs[:, iu[0], iu[1]] == 0
    n_idx, m_idx = np.nonzero(miss)
    i, j = iu[0][m_idx], iu[1][m_idx]
    prob = 1.0 / (1.0 + np.exp(-psi[n_idx, i, j]))
    v = (state.rng.random(len(n_idx)) < prob).astype(np.int8)
    state.X[K][n_idx, i, j] = v
    state.X[K][n_idx, j, i] = v
    return state


def bottom_loglik(state):
    """``log P(X_K^(n) | A, Theta, X_{K-1}^(n))`` for every ``n``, observed
    entries only."""
    K = state.K
    obs = None if state.obs is None else state.obs.astype(bool)
    return loglik_layer(state.X[K], state.psi(K), obs)


# ---------------------------------------------------------------------------
# sweeps


def _check_finite(state):
    bad = [f"C_{k}" for k in range(1, state.K + 1) if not np.isfinite(state.C[k - 1])]
    bad += [f"Gamma_{k}" for k in range(1, state.K + 1) if not np.all(np.isfinite(state.Gamma[k - 1]))]
    if not np.all(np.isfinite(state.nu)):
        bad.append("nu")
    if bad:
        raise NumericalError(f"non-finite parameters after sweep: {', '.join(bad)}")


def _sweep(state, ns, scale, omega_ns=None):
    state.subset = ns
    state.scale = scale
    update_X0_all(state)
    for k in range(1, state.K):
        update_interior_layer(state, k)
    for k in range(1, state.K + 1):
        update_layer_A(state, k)
    update_omegas(state, omega_ns)
    for k in range(1, state.K + 1):
        update_theta_layer(state, k)
    update_nu(state)
    impute_masked(state)
    _check_finite(state)
    state.subset = np.arange(state.N)
    state.scale = 1.0
    return state


def sweep_standard(state, config=None):
    """One full scan using every individual."""
    return _sweep(state, np.arange(state.N), 1.0)


def sweep_subsampling(state, config=None):
    """One scan whose parameter conditionals use a random subset of individuals."""
    config = config or state.config
    N = state.N
    size = N if config.subsample_size is None else min(config.subsample_size, N)
    ns = np.sort(state.subset_rng.choice(N, size=size, replace=False)).astype(np.int64)
    omega_ns = ns if config.omega_subset_only else None
    return _sweep(state, ns, N / size, omega_ns)


# ---------------------------------------------------------------------------
# chains


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """One recorded state.  ``loglik`` is ``None`` in the subsampling phase."""

    t: int
    phase: str
    A: tuple
    C: np.ndarray
    Gamma: tuple
    nu: np.ndarray
    loglik: np.ndarray | None
    x0: np.ndarray | None = None
    latents: tuple | None = None
    imputed: np.ndarray | None = None


@dataclass(eq=False)
class ChainTrace:
    """Recorded states of one chain, in iteration order."""

    shape: NetworkShape
    config: SamplerConfig
    records: list
    mask: EdgeMask | None = None
    anomalies: int = 0

    def __len__(self):
        return len(self.records)

    def phase(self, name):
        return ChainTrace(self.shape, self.config, [r for r in self.records if r.phase == name],
                          self.mask, self.anomalies)

    @property
    def C(self):
        return np.array([r.C for r in self.records])

    def gamma(self, k):
        return np.array([r.Gamma[k - 1] for r in self.records])

    def A(self, k):
        return np.array([r.A[k - 1] for r in self.records])

    @property
    def nu(self):
        return np.array([r.nu for r in self.records])

    @property
    def loglik(self):
        rows = [r.loglik for r in self.records if r.loglik is not None]
        return np.array(rows)

    def params(self, index):
        r = self.records[index]
        return ModelParams(r.A, r.C, r.Gamma, r.nu, self.config.truncation)


def _record(state, t, phase, with_loglik, masked_positions):
    cfg = state.config
    x0 = latents = imputed = None
    if cfg.record_latents:
        x0 = state.x0_codes().copy()
        latents = tuple(upper_bits(state.X[k]).copy() for k in range(1, state.K))
    if masked_positions is not None:
        n, i, j = masked_positions
        imputed = state.X[state.K][n, i, j].copy()
    return TraceRecord(
        t=t,
        phase=phase,
        A=tuple(a.copy() for a in state.A),
        C=state.C.copy(),
        Gamma=tuple(g.copy() for g in state.Gamma),
        nu=state.nu.copy(),
        loglik=bottom_loglik(state) if with_loglik else None,
        x0=x0,
        latents=latents,
        imputed=imputed,
    )


def run_chain(data, shape, config, mask=None, init=None, state=None, callback=None):
    """Run the subsampling phase followed by the standard phase.

    Parameters
    ----------
    data : array_like, shape (N, p_K, p_K)
    shape : NetworkShape or sequence of int
    config : SamplerConfig
    mask : EdgeMask, optional
    init : optional
        Starting connection matrices (see :func:`init_state`).
    state : GibbsState, optional
        Continue from an existing state instead of initialising.
    callback : callable, optional
        Called as ``callback(record)`` for every recorded state.

    Returns
    -------
    ChainTrace
        States from sweep ``t >= burn_in`` with ``(t - burn_in) % thin == 0``;
        ``t`` counts from 0 across both phases.  Log-likelihoods are only
        recorded in the standard phase.
    """
    shape = shape if isinstance(shape, NetworkShape) else NetworkShape(shape)
    if state is None:
        state = init_state(data, shape, config, mask=mask, init=init)
    masked_positions = None
    if isinstance(mask, EdgeMask) and len(mask):
        masked_positions = tuple(np.array(v, dtype=np.int64) for v in zip(*mask.positions))
    records = []
    total = config.subsample_iters + config.standard_iters
    for t in range(total):
        sub = t < config.subsample_iters
        if sub:
            sweep_subsampling(state, config)
        else:
            sweep_standard(state, config)
        if t >= config.burn_in and (t - config.burn_in) % config.thin == 0:
            rec = _record(state, t, "subsampling" if sub else "standard", not sub, masked_positions)
            if rec.loglik is not None and not np.all(np.isfinite(rec.loglik)):
                raise NumericalError(f"non-finite log-likelihood at sweep {t}")
            records.append(rec)
            if callback is not None:
                callback(rec)
    return ChainTrace(shape, config, records, mask if isinstance(mask, EdgeMask) else None,
                      int(state.anomalies[0]))
