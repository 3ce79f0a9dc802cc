"""Executable checks for when connection matrices are identifiable.

The central object is the class ``M_d`` of square binary matrices with a
unit diagonal whose *pair-sum fingerprints* are all distinct: for every
subset ``S`` of column pairs ``(i, j)``, ``i < j``, form the off-diagonal
part of ``sum_{(i,j) in S} (m_i m_j^T + m_j m_i^T)``; two different subsets
must never give the same matrix.  Conditions on the connection matrices
``A_k`` are then phrased through ``M_d``:

* ``in_A1``: every column has two pure rows (two copies of the identity);
* ``in_A21``: two disjoint sets of rows each forming a transposed ``M_d``
  member;
* ``in_A22``: distinct columns;
* ``in_A23``: the matrix with rows ``(1, a_i * a_j)`` has full column rank.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numba
import numpy as np

__all__ = [
    "MAX_MD_DIM",
    "DEFAULT_NODE_CAP",
    "MdReport",
    "A21Result",
    "in_class_Md",
    "in_A1",
    "in_A21",
    "in_A22",
    "in_A23",
    "in_A2",
    "integer_rank",
    "md_census",
]

MAX_MD_DIM = 6
DEFAULT_NODE_CAP = 1_000_000


@dataclass(frozen=True, eq=False)
class MdReport:
    """Outcome of :func:`in_class_Md`.

    ``witness`` is ``None`` for members.  Otherwise it is either
    ``("diagonal", i)`` for an offending diagonal entry, or
    ``("collision", S1, S2)`` with two different lists of column pairs whose
    off-diagonal pair sums coincide.
    """

    matrix: np.ndarray
    in_class: bool
    witness: tuple | None = None

    def __bool__(self):
        return self.in_class


def pair_sum(M, pairs):
    """Off-diagonal part of ``sum (m_i m_j^T + m_j m_i^T)`` over ``pairs``."""
    M = np.asarray(M, dtype=np.int64)
    d = M.shape[0]
    out = np.zeros((d, d), dtype=np.int64)
    for i, j in pairs:
        out += np.outer(M[:, i], M[:, j]) + np.outer(M[:, j], M[:, i])
    np.fill_diagonal(out, 0)
    return out


@numba.njit(cache=True)
def _pair_fields(M):
    # fields[p, f]: entry f (upper-triangular, row-major) of the pair-sum
    # matrix contributed by column pair p.
    d = M.shape[0]
    m = d * (d - 1) // 2
    fields = np.zeros((m, m), dtype=np.int64)
    p = 0
    for i in range(d):
        for j in range(i + 1, d):
            f = 0
            for u in range(d):
                for v in range(u + 1, d):
                    fields[p, f] = M[u, i] * M[v, j] + M[u, j] * M[v, i]
                    f += 1
            p += 1
    return fields


@numba.njit(cache=True)
def _find_collision(M):
    # Walk all subsets in Gray-code order, updating the fingerprint one pair
    # at a time, and detect repeats with an open-addressing hash table.
    fields = _pair_fields(M)
    m = fields.shape[0]
    n_sub = 1 << m
    size = 1
    while size < 2 * n_sub:
        size <<= 1
    table = -np.ones(size, dtype=np.int64)
    prints = np.zeros((n_sub, m), dtype=np.int64)
    masks = np.zeros(n_sub, dtype=np.int64)
    cur = np.zeros(m, dtype=np.int64)
    mask = 0
    for g in range(n_sub):
        if g > 0:
            # bit that flips between consecutive Gray codes
            b = 0
            while not (g >> b) & 1:
                b += 1
            if (mask >> b) & 1:
                for f in range(m):
                    cur[f] -= fields[b, f]
            else:
                for f in range(m):
                    cur[f] += fields[b, f]
            mask ^= 1 << b
        h = np.uint64(1469598103934665603)
        for f in range(m):
            h = (h ^ np.uint64(cur[f] + 1)) * np.uint64(1099511628211)
        slot = np.int64(h & np.uint64(size - 1))
        while table[slot] >= 0:
            other = table[slot]
            same = True
            for f in range(m):
                if prints[other, f] != cur[f]:
                    same = False
                    break
            if same:
                return masks[other], mask
            slot = (slot + 1) & (size - 1)
        table[slot] = g
        masks[g] = mask
        for f in range(m):
            prints[g, f] = cur[f]
    return -1, -1


def _mask_to_pairs(mask, d):
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    return [pairs[b] for b in range(len(pairs)) if (mask >> b) & 1]


def in_class_Md(M) -> MdReport:
    """Decide membership of a square binary matrix in ``M_d``.

    Parameters
    ----------
    M : array_like, shape (d, d)
        Binary, ``d <= 6``.

    Returns
    -------
    MdReport
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    if not np.all((M == 0) | (M == 1)):
        raise ValueError("M must be binary")
    d = M.shape[0]
    if d > MAX_MD_DIM:
        raise ValueError(f"exact M_d check is limited to d <= {MAX_MD_DIM} (got {d}); "
                         f"2^{d * (d - 1) // 2} subsets would be enumerated")
    M = M.astype(np.int64)
    for i in range(d):
        if M[i, i] != 1:
            return MdReport(M, False, ("diagonal", i))
    if d == 1:
        return MdReport(M, True)
    a, b = _find_collision(M)
    if a < 0:
        return MdReport(M, True)
    return MdReport(M, False, ("collision", _mask_to_pairs(a, d), _mask_to_pairs(b, d)))


# ---------------------------------------------------------------------------
# census


@numba.njit(cache=True)
def _census(d):
    m = d * (d - 1) // 2
    n_off = d * (d - 1)
    n_sub = 1 << m
    size = 1
    while size < 2 * n_sub:
        size <<= 1
    keys = np.zeros(size, dtype=np.uint64)
    stamp = np.zeros(size, dtype=np.int64)
    M = np.zeros((d, d), dtype=np.int64)
    packed = np.zeros(m, dtype=np.uint64)
    total = 0
    members = 0
    for code in range(1 << n_off):
        # fill the off-diagonal entries from the bits of code
        b = 0
        for u in range(d):
            M[u, u] = 1
            for v in range(d):
                if u != v:
                    M[u, v] = (code >> b) & 1
                    b += 1
        distinct = True
        for i in range(d):
            for j in range(i + 1, d):
                eq = True
                for u in range(d):
                    if M[u, i] != M[u, j]:
                        eq = False
                        break
                if eq:
                    distinct = False
        if not distinct:
            continue
        total += 1
        # pack each pair's fingerprint into 5-bit fields (sums stay <= 2m < 32)
        p = 0
        for i in range(d):
            for j in range(i + 1, d):
                val = np.uint64(0)
                f = 0
                for u in range(d):
                    for v in range(u + 1, d):
                        e = M[u, i] * M[v, j] + M[u, j] * M[v, i]
                        val += np.uint64(e) << np.uint64(5 * f)
                        f += 1
                packed[p] = val
                p += 1
        cur = np.uint64(0)
        mask = 0
        ok = True
        for g in range(n_sub):
            if g > 0:
                bb = 0
                while not (g >> bb) & 1:
                    bb += 1
                if (mask >> bb) & 1:
                    cur -= packed[bb]
                else:
                    cur += packed[bb]
                mask ^= 1 << bb
            h = (cur * np.uint64(11400714819323198485)) >> np.uint64(40)
            slot = np.int64(h) & (size - 1)
            while stamp[slot] == code + 1:
                if keys[slot] == cur:
                    ok = False
                    break
                slot = (slot + 1) & (size - 1)
            if not ok:
                break
            stamp[slot] = code + 1
            keys[slot] = cur
        if ok:
            members += 1
    return total, members


def md_census(d):
    """Count unit-diagonal, distinct-column ``d x d`` binary matrices in ``M_d``.

    Parameters
    ----------
    d : {2, 3, 4, 5}

    Returns
    -------
    total : int
        Matrices with unit diagonal and pairwise distinct columns.
    in_md : int
        How many of those belong to ``M_d``.
    fraction : float
    """
    d = int(d)
    if not 2 <= d <= 5:
        raise ValueError("census is exhaustive and limited to 2 <= d <= 5")
    total, members = _census(d)
    return int(total), int(members), members / total


# ---------------------------------------------------------------------------
# conditions on the connection matrices


def _layers(A):
    A = A.A if hasattr(A, "A") else A
    if isinstance(A, np.ndarray) and A.ndim == 2:
        A = [A]
    return [np.asarray(a, dtype=np.int64) for a in A]


def in_A1(A) -> bool:
    """Every layer has ``p_k >= 2 p_{k-1}`` and two pure rows per column."""
    for a in _layers(A):
        p, q = a.shape
        if p < 2 * q:
            return False
        pure = a.sum(axis=1) == 1
        counts = a[pure].sum(axis=0)
        if np.any(counts < 2):
            return False
    return True


def in_A22(A) -> bool:
    """Every layer has pairwise distinct columns."""
    for a in _layers(A):
        cols = {a[:, j].tobytes() for j in range(a.shape[1])}
        if len(cols) < a.shape[1]:
            return False
    return True


def integer_rank(D) -> int:
    """Exact rank of an integer matrix by fraction-free (Bareiss) elimination."""
    rows = [[int(v) for v in r] for r in np.asarray(D)]
    if not rows:
        return 0
    n_cols = len(rows[0])
    rank = 0
    prev = 1
    for col in range(n_cols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][col] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        pr = rows[rank]
        for r in range(rank + 1, len(rows)):
            row = rows[r]
            rows[r] = [(pr[col] * row[c] - row[col] * pr[c]) // prev for c in range(n_cols)]
        prev = pr[col]
        rank += 1
        if rank == len(rows):
            break
    return rank


def in_A23(A) -> bool:
    """Rows ``(1, a_i * a_j)`` over node pairs ``i < j`` span dimension ``p_{k-1} + 1``."""
    for a in _layers(A):
        p, q = a.shape
        rows = {tuple([1] + list(a[i] * a[j])) for i, j in combinations(range(p), 2)}
        if integer_rank(np.array(sorted(rows), dtype=np.int64).reshape(-1, q + 1)) != q + 1:
            return False
    return True


@dataclass(frozen=True, eq=False)
class A21Result:
    """Outcome of the search for two disjoint ``M_d`` blocks in one layer.

    ``decided`` is false when the node cap stopped the search; then
    ``found`` is meaningless.  ``rows`` holds the two lists of row indices
    (slot ``i`` of each block first) when a pair was found.
    """

    decided: bool
    found: bool
    rows: tuple | None = None
    nodes: int = 0


class _NodeCapReached(Exception):
    pass


def _search_layer(a, node_cap):
    p, q = a.shape
    patterns, inverse = np.unique(a, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    counts = np.bincount(inverse, minlength=len(patterns))
    # candidate patterns per slot; purest first so identity blocks come early
    order = np.lexsort((np.arange(len(patterns)), patterns.sum(axis=1)))
    slots = [[int(r) for r in order if patterns[r, i] == 1] for i in range(q)]
    if any(not s for s in slots):
        return A21Result(True, False)
    nodes = 0
    memo = {}
    used = np.zeros(len(patterns), dtype=np.int64)

    def member(block):
        key = tuple(block)
        if key not in memo:
            memo[key] = in_class_Md(patterns[list(block)].T).in_class
        return memo[key]

    def blocks(depth, chosen):
        # yields complete blocks of distinct patterns respecting `used`
        nonlocal nodes
        nodes += 1
        if nodes > node_cap:
            raise _NodeCapReached
        if depth == q:
            if member(chosen):
                yield list(chosen)
            return
        for r in slots[depth]:
            if r in chosen or used[r] >= counts[r]:
                continue
            chosen.append(r)
            used[r] += 1
            yield from blocks(depth + 1, chosen)
            used[r] -= 1
            chosen.pop()

    try:
        for first in blocks(0, []):
            for second in blocks(0, []):
                rows = []
                taken = set()
                for block in (first, second):
                    idx = []
                    for r in block:
                        cand = next(i for i in np.flatnonzero(inverse == r) if i not in taken)
                        taken.add(int(cand))
                        idx.append(int(cand))
                    rows.append(idx)
                return A21Result(True, True, tuple(rows), nodes)
    except _NodeCapReached:
        return A21Result(False, False, None, nodes)
    return A21Result(True, False, None, nodes)


def in_A21(A, node_cap=DEFAULT_NODE_CAP, detail=False):
    """Search every layer for two disjoint row blocks forming ``M_d`` members.

    Parameters
    ----------
    A : ModelParams or sequence of ndarray
    node_cap : int
        Search nodes allowed per layer before giving up.
    detail : bool
        Return the per-layer :class:`A21Result` list as well.

    Returns
    -------
    bool or None
        ``None`` means undecided: the node cap was reached in some layer
        and no other layer had already failed.
    """
    results = []
    verdict = True
    for a in _layers(A):
        p, q = a.shape
        if q > MAX_MD_DIM:
            raise ValueError(f"layer with {q} columns exceeds the exact M_d limit of {MAX_MD_DIM}")
        if p < 2 * q:
            res = A21Result(True, False)
        else:
            res = _search_layer(a, node_cap)
        results.append(res)
        if res.decided and not res.found:
            verdict = False
        elif not res.decided and verdict is True:
            verdict = None
    return (verdict, results) if detail else verdict


def in_A2(A, S=None, use_shortcut=True, node_cap=DEFAULT_NODE_CAP):
    """Generic-identifiability condition on the connection matrices.

    With ``use_shortcut`` and the structural side conditions (``S`` in
    {1, 2}, at least three top-layer nodes, no all-ones column) membership
    reduces to :func:`in_A21` alone; otherwise all three parts are checked.

    Returns
    -------
    bool or None
        ``None`` when the block search was undecided.
    """
    layers = _layers(A)
    shortcut = (
        use_shortcut
        and S is not None
        and S in (1, 2)
        and layers[0].shape[1] >= 3
        and all(not np.any(a.all(axis=0)) for a in layers)
    )
    v21 = in_A21(layers, node_cap=node_cap)
    if shortcut or v21 is False:
        return v21
    if not (in_A22(layers) and in_A23(layers)):
        return False
    return v21
