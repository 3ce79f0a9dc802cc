"""Compiled inner loops of the Gibbs sampler.

All arrays use full symmetric storage; loops only touch ``i < j``.
Observation masks are uint8 arrays of the same shape as the data, with
``use_mask`` switching them on, so that unmasked layers can pass a dummy.
"""

import math

import numba
import numpy as np

from .polyagamma import _draw_one


@numba.njit(cache=True)
def softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@numba.njit(cache=True)
def draw_omegas(psi, omega, obs, use_mask, ns, rng, anomalies):
    """omega[n, i, j] ~ PG(1, psi[n, i, j]) for n in ns and observed i < j."""
    p = psi.shape[1]
    for n in ns:
        for i in range(p):
            for j in range(i + 1, p):
                if use_mask and obs[n, i, j] == 0:
                    continue
                omega[n, i, j] = _draw_one(psi[n, i, j], rng, anomalies)


@numba.njit(cache=True)
def row_candidate_loglik(X, obs, use_mask, R, C, cands, i, ns):
    """Bernoulli log-likelihood of edges at node i for every candidate row.

    R[n, s, j] holds (Gamma * X_prev[n]) @ a_j, so the logit for node pair
    (i, j) under candidate row c is C + sum_{s in c} R[n, s, j].
    cands is padded with -1.
    """
    n_c, width = cands.shape
    p = X.shape[1]
    out = np.zeros(n_c)
    for c in range(n_c):
        total = 0.0
        for n in ns:
            for j in range(p):
                if j == i:
                    continue
                if use_mask and obs[n, i, j] == 0:
                    continue
                psi = C
                for w in range(width):
                    s = cands[c, w]
                    if s < 0:
                        break
                    psi += R[n, s, j]
                total += X[n, i, j] * psi - softplus(psi)
        out[c] = total
    return out


@numba.njit(cache=True)
def theta_stats(X, Xprev, A, omega, obs, use_mask, ns, scale, gidx):
    """Gaussian sufficient statistics of (C, upper-triangular Gamma).

    Given omega the augmented log-likelihood is
    sum (x - 1/2) kappa.theta - omega/2 (kappa.theta)^2, with kappa the
    design row of the pair.  Returns G = scale * sum omega kappa kappa^T and
    h = scale * sum (x - 1/2) kappa.  Index 0 is the intercept.
    """
    p, q = A.shape
    P = 1 + q * (q + 1) // 2
    G = np.zeros((P, P))
    h = np.zeros(P)
    kap = np.zeros(P)
    touched = np.zeros(P, dtype=np.int64)
    rows_i = np.empty(q, dtype=np.int64)
    rows_j = np.empty(q, dtype=np.int64)
    for n in ns:
        for i in range(p):
            ni = 0
            for s in range(q):
                if A[i, s]:
                    rows_i[ni] = s
                    ni += 1
            for j in range(i + 1, p):
                if use_mask and obs[n, i, j] == 0:
                    continue
                nj = 0
                for t in range(q):
                    if A[j, t]:
                        rows_j[nj] = t
                        nj += 1
                nt = 1
                touched[0] = 0
                kap[0] = 1.0
                for a in range(ni):
                    s = rows_i[a]
                    for b in range(nj):
                        t = rows_j[b]
                        x = 1.0 if s == t else float(Xprev[n, s, t])
                        if x == 0.0:
                            continue
                        g = gidx[s, t]
                        if kap[g] == 0.0:
                            touched[nt] = g
                            nt += 1
                        kap[g] += x
                w = omega[n, i, j]
                r = X[n, i, j] - 0.5
                for a in range(nt):
                    ga = touched[a]
                    h[ga] += scale * r * kap[ga]
                    for b in range(nt):
                        gb = touched[b]
                        G[ga, gb] += scale * w * kap[ga] * kap[gb]
                for a in range(nt):
                    kap[touched[a]] = 0.0
    return G, h


@numba.njit(cache=True)
def affected_pairs(A):
    """For each upper pair (s, t) of the parent layer, the child pairs
    (u < v) whose logit contains X_prev[s, t], with multiplicity
    A[u,s]A[v,t] + A[u,t]A[v,s].  CSR layout indexed by s * q + t."""
    p, q = A.shape
    counts = np.zeros(q * q + 1, dtype=np.int64)
    for s in range(q):
        for t in range(s + 1, q):
            for u in range(p):
                for v in range(u + 1, p):
                    if A[u, s] * A[v, t] + A[u, t] * A[v, s] > 0:
                        counts[s * q + t + 1] += 1
    ptr = np.cumsum(counts)
    us = np.empty(ptr[-1], dtype=np.int64)
    vs = np.empty(ptr[-1], dtype=np.int64)
    mult = np.empty(ptr[-1], dtype=np.float64)
    fill = ptr[:-1].copy()
    for s in range(q):
        for t in range(s + 1, q):
            for u in range(p):
                for v in range(u + 1, p):
                    m = A[u, s] * A[v, t] + A[u, t] * A[v, s]
                    if m > 0:
                        k = fill[s * q + t]
                        us[k] = u
                        vs[k] = v
                        mult[k] = m
                        fill[s * q + t] += 1
    return ptr, us, vs, mult


@numba.njit(cache=True)
def interior_conditional(n, s, t, Xk, psik, Xnext, psinext, Gnext, obs, use_mask, ptr, us, vs, mult):
    """Log-odds of X_k[n, s, t] = 1 against 0 given everything else."""
    q = Xk.shape[1]
    lo = psik[n, s, t]
    cur = Xk[n, s, t]
    g = Gnext[s, t]
    key = s * q + t
    for k in range(ptr[key], ptr[key + 1]):
        u = us[k]
        v = vs[k]
        if use_mask and obs[n, u, v] == 0:
            continue
        delta = g * mult[k]
        base = psinext[n, u, v] - cur * delta
        one = base + delta
        x = Xnext[n, u, v]
        lo += (x * one - softplus(one)) - (x * base - softplus(base))
    return lo


@numba.njit(cache=True)
def update_interior(Xk, psik, Xnext, psinext, Gnext, obs, use_mask, ptr, us, vs, mult, ns, rng):
    """Single-site Gibbs over every interior entry X_k[n, s, t], s < t."""
    q = Xk.shape[1]
    for n in ns:
        for s in range(q):
            for t in range(s + 1, q):
                lo = interior_conditional(n, s, t, Xk, psik, Xnext, psinext, Gnext, obs, use_mask,
                                          ptr, us, vs, mult)
                u01 = rng.random()
                # P(x = 1) = 1 / (1 + exp(-lo)), evaluated without overflow
                if lo >= 0.0:
                    new = 1 if u01 * (1.0 + math.exp(-lo)) < 1.0 else 0
                else:
                    e = math.exp(lo)
                    new = 1 if u01 * (1.0 + e) < e else 0
                old = Xk[n, s, t]
                if new != old:
                    Xk[n, s, t] = new
                    Xk[n, t, s] = new
                    g = Gnext[s, t] * (new - old)
                    key = s * q + t
                    for k in range(ptr[key], ptr[key + 1]):
                        u = us[k]
                        v = vs[k]
                        d = g * mult[k]
                        psinext[n, u, v] += d
                        psinext[n, v, u] += d
