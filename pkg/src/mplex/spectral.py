"""Spectral initialisation of the connection matrices.

Mixed-SCORE estimates mixed memberships in a degree-corrected
mixed-membership block model: take the leading eigenvectors, divide by
the first one entrywise, locate the simplex spanned by the resulting
rows, and read each node's membership off its barycentric coordinates.
The multilayer version applies it to the mean adjacency of the observed
layer, thresholds memberships into ``A_K``, keeps the purest node of
every community as a stand-in for the layer above, and repeats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from .model import NetworkShape

__all__ = [
    "DegenerateSpectrumError",
    "DcmmEstimate",
    "SpectralInit",
    "topk_symeig",
    "successive_projection",
    "mixed_score",
    "threshold_memberships",
    "select_pure_rows",
    "multilayer_init",
]


class DegenerateSpectrumError(ValueError):
    """The leading eigenvector has (near) zero entries, so ratios are undefined."""


@dataclass(frozen=True, eq=False)
class DcmmEstimate:
    """Output of :func:`mixed_score`.

    Attributes
    ----------
    Pi : ndarray, shape (p, q)
        Row-stochastic membership estimate.
    values, vectors : ndarray
        Leading eigenpairs of the input.
    vertices : ndarray, shape (q, q - 1)
        Simplex vertices found by vertex hunting.
    ratios : ndarray, shape (p, q - 1)
    """

    Pi: np.ndarray
    values: np.ndarray
    vectors: np.ndarray
    vertices: np.ndarray
    ratios: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralInit:
    """Connection matrices from :func:`multilayer_init`.

    ``A[k-1]`` is the estimate for layer ``k``; ``selected[k-1]`` lists, for
    each node of layer ``k - 1``, the layer-``k`` node chosen to represent
    it.  ``purity_gap[k-1]`` is the largest distance between a selected
    membership row and its pure target; large values flag communities with
    no near-pure node.
    """

    A: tuple
    selected: tuple
    estimates: tuple
    purity_gap: tuple


def _sign_fix(vectors, tol=1e-12):
    for c in range(vectors.shape[1]):
        v = vectors[:, c]
        nz = np.flatnonzero(np.abs(v) > tol)
        if nz.size and v[nz[0]] < 0:
            vectors[:, c] = -v
    return vectors


def topk_symeig(M, q):
    """The ``q`` algebraically largest eigenpairs of a symmetric matrix.

    Eigenvalues come in decreasing order.  Each eigenvector is signed so its
    first coordinate exceeding ``1e-12`` in magnitude is positive.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(np.abs(M).max(), 1.0)
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("matrix must be symmetric")
    if not 1 <= q <= M.shape[0]:
        raise ValueError(f"q must lie in [1, {M.shape[0]}]")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = vals[::-1][:q].copy()
    vecs = vecs[:, ::-1][:, :q].copy()
    return vals, _sign_fix(vecs)


def successive_projection(points, q):
    """Indices of ``q`` rows of ``points`` picked by successive projection
    on the lifted rows ``(1, x)``; these approximate simplex vertices."""
    Y = np.hstack([np.ones((points.shape[0], 1)), np.asarray(points, dtype=np.float64)])
    picked = []
    for _ in range(q):
        norms = np.einsum("ij,ij->i", Y, Y)
        if picked:
            norms[picked] = -1.0
        r = int(np.argmax(norms))
        picked.append(r)
        u = Y[r] / np.linalg.norm(Y[r])
        Y = Y - np.outer(Y @ u, u)
    return picked


def mixed_score(Y, q, S=None, seed=0, n_init=10):
    """Estimate mixed memberships of ``q`` communities from a symmetric matrix.

    Parameters
    ----------
    Y : ndarray, shape (p, p)
        Symmetric and nonnegative, e.g. a mean adjacency matrix.
    q : int
    S : int, optional
        Unused by the estimate itself; accepted so callers can pass the
        sparsity context along.
    seed : int
        Seed of the k-means restarts in vertex hunting.
    n_init : int
        k-means restarts.

    Returns
    -------
    DcmmEstimate
    """
    Y = np.asarray(Y, dtype=np.float64)
    p = Y.shape[0]
    vals, vecs = topk_symeig(Y, q)
    if q == 1:
        return DcmmEstimate(np.ones((p, 1)), vals, vecs, np.zeros((1, 0)), np.zeros((p, 0)))
    xi1 = vecs[:, 0]
    if np.any(np.abs(xi1) < 1e-10 * np.linalg.norm(xi1)):
        raise DegenerateSpectrumError("leading eigenvector has near-zero entries")
    R = vecs[:, 1:] / xi1[:, None]
    L = min(p, 5 * q)
    if q < L < p:
        km = KMeans(n_clusters=L, n_init=n_init, random_state=seed).fit(R)
        centers = km.cluster_centers_
    else:
        centers = R
    V = centers[successive_projection(centers, q)]
    # barycentric coordinates of every row against the vertices
    system = np.vstack([np.ones(q), V.T])
    rhs = np.vstack([np.ones(p), R.T])
    W = np.linalg.lstsq(system, rhs, rcond=None)[0].T
    # undo the degree weighting of each vertex
    denom = vals[0] + (V**2) @ vals[1:]
    b1 = 1.0 / np.sqrt(np.maximum(denom, 1e-12 * abs(vals[0])))
    Pi = np.clip(W / b1[None, :], 0.0, None)
    sums = Pi.sum(axis=1)
    empty = sums <= 0
    if np.any(empty):
        Pi[empty, np.argmax(W[empty], axis=1)] = 1.0
        sums = Pi.sum(axis=1)
    Pi = Pi / sums[:, None]
    return DcmmEstimate(Pi, vals, vecs, V, R)


def threshold_memberships(Pi, S):
    """Binary rows ``1{Pi >= 1/S}``, repaired to have between 1 and ``S`` ones.

    A row with no entry above the threshold gets its largest column; a row
    with more than ``S`` keeps the ``S`` largest (lowest index wins ties).
    """
    Pi = np.asarray(Pi, dtype=np.float64)
    A = (Pi >= 1.0 / S - 1e-12).astype(np.int8)
    for i in range(A.shape[0]):
        k = A[i].sum()
        if k == 0:
            A[i, np.argmax(Pi[i])] = 1
        elif k > S:
            order = np.lexsort((np.arange(Pi.shape[1]), -Pi[i]))
            A[i] = 0
            A[i, order[:S]] = 1
    return A


def select_pure_rows(Pi):
    """Rows ``I`` minimising ``||Pi[I, :] - Identity||_F^2``, one per column.

    The objective splits over (row, column) pairs, so this is a linear
    assignment problem with cost ``||pi_i - e_c||^2``.  Returns the row for
    each column in column order, and the per-column costs.
    """
    Pi = np.asarray(Pi, dtype=np.float64)
    q = Pi.shape[1]
    cost = (Pi**2).sum(axis=1)[:, None] - 2.0 * Pi + 1.0
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cols)
    picked = rows[order]
    return picked, cost[picked, np.arange(q)]


def multilayer_init(observed, shape, S, seed=0):
    """Initial connection matrices for every layer, finest first.

    Parameters
    ----------
    observed : ndarray
        Either one ``(p_K, p_K)`` mean adjacency matrix or a stack
        ``(N, p_K, p_K)`` of observed matrices (averaged here).
    shape : NetworkShape or sequence of int
    S : int
        Maximum number of ones per row.
    seed : int

    Returns
    -------
    SpectralInit
    """
    shape = shape if isinstance(shape, NetworkShape) else NetworkShape(shape)
    Xbar = np.asarray(observed, dtype=np.float64)
    if Xbar.ndim == 3:
        if Xbar.shape[0] < 1:
            raise ValueError("need at least one observed matrix")
        Xbar = Xbar.mean(axis=0)
    if Xbar.shape != (shape.p[-1], shape.p[-1]):
        raise ValueError(f"observed matrices are {Xbar.shape}, shape expects {shape.p[-1]} nodes")
    A, selected, estimates, gaps = [], [], [], []
    for k in range(shape.K, 0, -1):
        q = shape.p[k - 1]
        try:
            est = mixed_score(Xbar, q, S, seed=seed)
        except DegenerateSpectrumError as err:
            raise DegenerateSpectrumError(f"layer {k}: {err}") from None
        A.append(threshold_memberships(est.Pi, S))
        picked, costs = select_pure_rows(est.Pi)
        selected.append(tuple(int(i) for i in picked))
        estimates.append(est)
        gaps.append(float(np.sqrt(costs.max())))
        Xbar = Xbar[np.ix_(picked, picked)]
    return SpectralInit(tuple(A[::-1]), tuple(selected[::-1]), tuple(estimates[::-1]), tuple(gaps[::-1]))
