"""Independent reference computations used by the tests.

Nothing here imports the sampler; the enumerations are written directly
from the model definition so that they can check it.
"""

from itertools import product

import numpy as np
from scipy.special import gammaln, logsumexp


def bern_loglik(x, psi):
    # log P(x | logit psi), x in {0, 1}
    return x * psi - np.logaddexp(0.0, psi)


def pair_list(p):
    return [(i, j) for i in range(p) for j in range(i + 1, p)]


def brute_marginal_k1(X1, A, C, Gamma, nu):
    """log P(X_1) for a one-layer model by looping over every X_0 configuration
    with plain Python arithmetic."""
    p0 = Gamma.shape[0]
    p1 = X1.shape[0]
    pairs0 = pair_list(p0)
    terms = []
    for code, bits in enumerate(product([0, 1], repeat=len(pairs0))):
        X0 = np.eye(p0)
        for (s, t), b in zip(pairs0, bits):
            X0[s, t] = X0[t, s] = b
        total = np.log(nu[code]) if nu[code] > 0 else -np.inf
        for i, j in pair_list(p1):
            psi = C
            for s in range(p0):
                for t in range(p0):
                    psi += A[i, s] * A[j, t] * Gamma[s, t] * X0[s, t]
            total += bern_loglik(X1[i, j], psi)
        terms.append(total)
    return logsumexp(terms)


def tiny_posterior_x0(X1, S=2, n_theta=400_000, seed=0, chunk=100_000, alpha=1.0):
    """Posterior of the top-layer configurations for a model with two top
    nodes under the default priors (C ~ N(0,1), Gamma entries ~ N+(0,1),
    nu ~ Dir(alpha), rows of A uniform over rows with 1..S ones).

    ``nu`` is integrated analytically (Dirichlet-multinomial), ``A`` and the
    latent codes by enumeration, and (C, Gamma) by Monte Carlo over prior
    draws.  Returns the posterior over joint codes ``z`` (length 2^N) as a
    dict mapping tuples to probabilities.
    """
    X1 = np.asarray(X1)
    N, p1, _ = X1.shape
    rows = [r for r in product([0, 1], repeat=2) if 1 <= sum(r) <= S]
    pairs = pair_list(p1)
    rng = np.random.default_rng(seed)
    zs = list(product([0, 1], repeat=N))
    log_dm = []
    for z in zs:
        n1 = sum(z)
        n0 = N - n1
        log_dm.append(gammaln(2 * alpha) - gammaln(2 * alpha + N)
                      + gammaln(alpha + n0) + gammaln(alpha + n1) - 2 * gammaln(alpha))
    log_dm = np.array(log_dm)
    acc = np.full(len(zs), -np.inf)
    done = 0
    while done < n_theta:
        m = min(chunk, n_theta - done)
        C = rng.standard_normal(m)
        g11 = np.abs(rng.standard_normal(m))
        g22 = np.abs(rng.standard_normal(m))
        g12 = np.abs(rng.standard_normal(m))
        for A in product(rows, repeat=p1):
            A = np.array(A)
            # loglik[m, n, x]
            ll = np.zeros((m, N, 2))
            for i, j in pairs:
                same = A[i, 0] * A[j, 0] * g11 + A[i, 1] * A[j, 1] * g22
                cross = A[i, 0] * A[j, 1] + A[i, 1] * A[j, 0]
                for x in (0, 1):
                    psi = C + same + x * cross * g12
                    ll[:, :, x] += bern_loglik(X1[None, :, i, j], psi[:, None])
            for zi, z in enumerate(zs):
                tot = ll[:, np.arange(N), list(z)].sum(axis=1)
                acc[zi] = np.logaddexp(acc[zi], logsumexp(tot))
        done += m
    post = acc + log_dm
    post = np.exp(post - logsumexp(post))
    return {z: float(v) for z, v in zip(zs, post)}


def random_params(shape, rng, S=2):
    """Random parameters of the layered model for a small shape."""
    from mplex.model import ModelParams
    shape = tuple(shape)
    A, G = [], []
    for q, p in zip(shape, shape[1:]):
        a = np.zeros((p, q), dtype=np.int8)
        for i in range(p):
            s = rng.integers(1, min(S, q) + 1)
            a[i, rng.choice(q, size=s, replace=False)] = 1
        A.append(a)
        g = np.abs(rng.normal(size=(q, q))) + 0.05
        G.append(np.triu(g) + np.triu(g, 1).T)
    m = shape[0] * (shape[0] - 1) // 2
    nu = rng.dirichlet(np.ones(2**m))
    return ModelParams(tuple(A), rng.normal(size=len(A)), tuple(G), nu)


def all_joint_configs(shape):
    """Every joint list of adjacency matrices (X_0, ..., X_K) for ``shape``,
    built directly from bit strings."""
    blocks = []
    for p in shape:
        pairs = pair_list(p)
        mats = []
        for bits in product([0, 1], repeat=len(pairs)):
            X = np.eye(p, dtype=np.int8)
            for (i, j), b in zip(pairs, bits):
                X[i, j] = X[j, i] = b
            mats.append(X)
        blocks.append(mats)
    return product(*blocks)


def md_member(M):
    """Membership in M_d straight from the definition: unit diagonal and
    pairwise different off-diagonal sums over all subsets of column pairs."""
    M = np.asarray(M, dtype=np.int64)
    d = M.shape[0]
    if not np.all(np.diag(M) == 1):
        return False
    pairs = pair_list(d)
    seen = set()
    for bits in product([0, 1], repeat=len(pairs)):
        S = np.zeros((d, d), dtype=np.int64)
        for (i, j), b in zip(pairs, bits):
            if b:
                S += np.outer(M[:, i], M[:, j]) + np.outer(M[:, j], M[:, i])
        key = tuple(S[np.triu_indices(d, 1)]) + tuple(S[np.tril_indices(d, -1)])
        if key in seen:
            return False
        seen.add(key)
    return True


def census_bruteforce(d):
    total = members = 0
    offdiag = [(i, j) for i in range(d) for j in range(d) if i != j]
    for bits in product([0, 1], repeat=len(offdiag)):
        M = np.eye(d, dtype=np.int64)
        for (i, j), b in zip(offdiag, bits):
            M[i, j] = b
        if len({tuple(c) for c in M.T}) < d:
            continue
        total += 1
        members += md_member(M)
    return total, members
