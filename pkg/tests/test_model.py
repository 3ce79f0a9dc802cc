import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from mplex.model import (
    NEG_INF,
    LayeredSample,
    ModelParams,
    NetworkShape,
    all_adjacency,
    decode_adjacency,
    edge_prob,
    encode_adjacency,
    from_upper_bits,
    generate_hsbm,
    log_joint,
    logit_edge,
    logit_matrix,
    marginal_loglik_obs,
    simulate,
    upper_bits,
)
from oracles import all_joint_configs, brute_marginal_k1, random_params

G2 = 4.0 * np.ones((2, 2)) + 6.0 * np.eye(2)
E1, E2 = np.array([[1, 0]]), np.array([[0, 1]])


class TestEncoding:
    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_round_trip(self, p):
        codes = np.arange(2 ** (p * (p - 1) // 2))
        np.testing.assert_array_equal(encode_adjacency(decode_adjacency(codes, p)), codes)

    def test_first_pair_is_most_significant(self):
        X = np.eye(3, dtype=np.int8)
        X[0, 1] = X[1, 0] = 1
        assert encode_adjacency(X) == 4
        X = np.eye(3, dtype=np.int8)
        X[1, 2] = X[2, 1] = 1
        assert encode_adjacency(X) == 1

    def test_all_adjacency_valid(self):
        Xs = all_adjacency(4)
        assert Xs.shape == (64, 4, 4)
        assert np.all(Xs == np.transpose(Xs, (0, 2, 1)))
        assert np.all(Xs[:, range(4), range(4)] == 1)

    def test_upper_bits_inverse(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, size=(5, 10)).astype(np.int8)
        np.testing.assert_array_equal(upper_bits(from_upper_bits(bits, 5)), bits)


class TestLogit:
    def test_shared_community(self):
        A = np.vstack([E1, E1])
        assert logit_edge(1, 0, 1, np.eye(2), A, -7.0, G2) == pytest.approx(3.0)

    def test_no_shared_community(self):
        A = np.vstack([E1, E2])
        assert logit_edge(1, 0, 1, np.eye(2), A, -7.0, G2) == pytest.approx(-7.0)

    def test_adjacent_communities(self):
        A = np.vstack([E1, E2])
        assert logit_edge(1, 0, 1, np.ones((2, 2)), A, -7.0, G2) == pytest.approx(-3.0)

    def test_matrix_form_matches_entrywise(self):
        rng = np.random.default_rng(4)
        pr = random_params((3, 7), rng)
        X0 = decode_adjacency(5, 3)
        M = logit_matrix(X0, pr.A[0], pr.C[0], pr.Gamma[0])
        for i in range(7):
            for j in range(7):
                if i != j:
                    assert M[i, j] == pytest.approx(logit_edge(1, i, j, X0, pr.A[0], pr.C[0], pr.Gamma[0]))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            logit_edge(1, 0, 1, np.eye(3), np.vstack([E1, E2]), 0.0, G2)
        with pytest.raises(ValueError):
            logit_edge(1, 0, 0, np.eye(2), np.vstack([E1, E2]), 0.0, G2)


class TestEdgeProb:
    def test_values(self):
        assert edge_prob(0.0) == 0.5
        assert edge_prob(3.0) == pytest.approx(0.95257, abs=5e-6)
        v = edge_prob(-745.0)
        assert v > 0.0
        assert edge_prob(745.0) == 1.0

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            edge_prob(np.nan)


class TestLogJoint:
    def test_tiny_normalisation(self):
        rng = np.random.default_rng(1)
        pr = random_params((2, 2), rng)
        tot = logsumexp([log_joint(LayeredSample(X), pr) for X in all_joint_configs((2, 2))])
        assert abs(np.exp(tot) - 1) < 1e-10

    def test_point_mass_sentinel(self):
        pr = ModelParams((np.eye(2),), [0.0], (np.eye(2),), [1.0, 0.0])
        s = LayeredSample((np.ones((2, 2)), np.eye(2)))
        assert log_joint(s, pr) == NEG_INF
        assert log_joint(LayeredSample((np.eye(2), np.eye(2))), pr) > NEG_INF

    def test_separate_theta_argument(self):
        pr = random_params((2, 3), np.random.default_rng(2))
        s = LayeredSample((np.eye(2), np.ones((3, 3))))
        assert log_joint(s, pr.A, pr) == log_joint(s, pr)

    def test_marginal_matches_brute_force(self):
        rng = np.random.default_rng(3)
        pr = random_params((2, 3), rng)
        for code in range(8):
            X1 = decode_adjacency(code, 3)
            ours = logsumexp([log_joint(LayeredSample((X0, X1)), pr) for X0 in all_adjacency(2)])
            ref = brute_marginal_k1(X1, pr.A[0], pr.C[0], pr.Gamma[0], pr.nu)
            assert ours == pytest.approx(ref, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([(2, 2), (2, 3), (2, 4), (3, 3), (3, 4), (2, 2, 3), (2, 3, 4), (3, 3, 3)]),
       st.integers(0, 10_000))
def test_normalisation_property(shape, seed):
    pr = random_params(shape, np.random.default_rng(seed))
    lj = [log_joint(LayeredSample(X), pr) for X in all_joint_configs(shape)]
    assert abs(np.exp(logsumexp(lj)) - 1) < 1e-9


class TestMarginal:
    def test_two_top_configurations(self):
        pr = random_params((2, 4), np.random.default_rng(5))
        X1 = decode_adjacency(37, 4)
        ref = logsumexp([log_joint(LayeredSample((X0, X1)), pr) for X0 in all_adjacency(2)])
        assert marginal_loglik_obs(X1, pr) == pytest.approx(ref, abs=1e-12)

    def test_point_mass_nu(self):
        pr = random_params((2, 4), np.random.default_rng(6))
        pr = ModelParams(pr.A, pr.C, pr.Gamma, [0.0, 1.0])
        X1 = decode_adjacency(12, 4)
        X0 = decode_adjacency(1, 2)
        assert marginal_loglik_obs(X1, pr) == pytest.approx(log_joint(LayeredSample((X0, X1)), pr))

    def test_second_enumerator(self):
        pr = random_params((3, 6), np.random.default_rng(7))
        rng = np.random.default_rng(8)
        for _ in range(5):
            X1 = decode_adjacency(int(rng.integers(0, 2**15)), 6)
            ref = brute_marginal_k1(X1, pr.A[0], pr.C[0], pr.Gamma[0], pr.nu)
            assert marginal_loglik_obs(X1, pr) == pytest.approx(ref, abs=1e-10)

    def test_two_layer_recursion(self):
        pr = random_params((2, 3, 4), np.random.default_rng(9))
        X2 = decode_adjacency(21, 4)
        ref = logsumexp([log_joint(LayeredSample((X0, X1, X2)), pr)
                         for X0 in all_adjacency(2) for X1 in all_adjacency(3)])
        assert marginal_loglik_obs(X2, pr) == pytest.approx(ref, abs=1e-12)

    def test_masked_pairs_are_marginalised(self):
        pr = random_params((2, 3), np.random.default_rng(10))
        obs = np.ones((3, 3), dtype=bool)
        obs[0, 2] = obs[2, 0] = False
        a = decode_adjacency(0b100, 3)
        b = decode_adjacency(0b110, 3)
        both = np.logaddexp(marginal_loglik_obs(a, pr), marginal_loglik_obs(b, pr))
        assert marginal_loglik_obs(a, pr, observed=obs) == pytest.approx(both)

    def test_budget(self):
        pr = random_params((4, 8), np.random.default_rng(0))
        with pytest.raises(ValueError, match="MCMC"):
            marginal_loglik_obs(np.eye(8), pr, budget=32)


class TestSimulate:
    def test_point_mass_top_layer(self):
        pr = random_params((3, 6), np.random.default_rng(0))
        nu = np.zeros(8)
        nu[5] = 1.0
        pr = ModelParams(pr.A, pr.C, pr.Gamma, nu)
        samples = simulate(pr.shape, pr, N=50, seed=1)
        assert all(encode_adjacency(s.X[0]) == 5 for s in samples)

    def test_saturation(self):
        pr = random_params((2, 4), np.random.default_rng(0))
        pr = ModelParams(pr.A, [50.0], pr.Gamma, pr.nu)
        X = simulate(pr.shape, pr, N=10_000, seed=2, as_samples=False)[-1]
        assert upper_bits(X).mean() == 1.0

    def test_frequencies_match_marginal(self):
        pr = random_params((2, 4), np.random.default_rng(12))
        N = 100_000
        X = simulate(pr.shape, pr, N=N, seed=3, as_samples=False)[-1]
        counts = np.bincount(encode_adjacency(X), minlength=64)
        probs = np.exp([marginal_loglik_obs(decode_adjacency(c, 4), pr) for c in range(64)])
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        se = np.sqrt(probs * (1 - probs) / N)
        assert np.all(np.abs(counts / N - probs) < 4 * se + 1e-12)

    def test_seeded(self):
        pr = random_params((2, 3, 5), np.random.default_rng(1))
        a = simulate(pr.shape, pr, N=20, seed=4, as_samples=False)
        b = simulate(pr.shape, pr, N=20, seed=4, as_samples=False)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_degree_stays_bounded(self):
        # C = -log p keeps every edge probability below exp(max logit term) / p
        G = np.array([[1.0, 0.5], [0.5, 1.0]])
        bound = np.exp(G.sum())
        degs = []
        for p in (16, 32, 64, 128):
            A = np.array([[1, 0], [0, 1], [1, 1]] * (p // 3 + 1))[:p]
            pr = ModelParams((A,), [-np.log(p)], (G,), [0.5, 0.5])
            X = simulate(pr.shape, pr, N=200, seed=p, as_samples=False)[-1]
            degs.append((X.sum(axis=2) - 1).mean())
        assert max(degs) <= bound

    def test_shape_check(self):
        pr = random_params((2, 4), np.random.default_rng(0))
        with pytest.raises(ValueError):
            simulate((2, 5), pr)


class TestShape:
    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            NetworkShape((3,))
        with pytest.raises(ValueError):
            NetworkShape((4, 3))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ModelParams((np.eye(2),), [0.0], (np.array([[1.0, 2.0], [0.0, 1.0]]),), [0.5, 0.5])
        with pytest.raises(ValueError):
            ModelParams((np.eye(2),), [0.0], (np.eye(2),), [1.0])


class TestHSBM:
    def test_probability_ranges(self):
        d = generate_hsbm((3, 9, 27), N=1, seed=0)
        coarse, leaf = d.labels
        same_leaf = leaf[:, None] == leaf[None, :]
        same_branch = coarse[:, None] == coarse[None, :]
        off = ~np.eye(27, dtype=bool)
        p = d.prob
        assert np.all((p[same_leaf & off] >= 0.7) & (p[same_leaf & off] <= 0.8))
        mid = same_branch & ~same_leaf
        assert np.all((p[mid] >= 0.4) & (p[mid] <= 0.5))
        assert np.all((p[~same_branch] >= 0) & (p[~same_branch] <= 0.1))
        np.testing.assert_array_equal(p, p.T)

    def test_labels(self):
        d = generate_hsbm((3, 9, 27), N=2, seed=1)
        assert [len(np.unique(lab)) for lab in d.labels] == [3, 9]
        assert d.X.shape == (2, 27, 27)

    def test_edge_frequency(self):
        d = generate_hsbm((3, 9, 27), N=10_000, seed=2)
        f = d.X[:, 0, 1].mean()
        p = d.prob[0, 1]
        assert abs(f - p) < 4 * np.sqrt(p * (1 - p) / 10_000)

    def test_malformed_tree(self):
        with pytest.raises(ValueError):
            generate_hsbm((3, 8, 27))
        with pytest.raises(ValueError):
            generate_hsbm((3,))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_permutation_equivariance(q, seed):
    rng = np.random.default_rng(seed)
    pr = random_params((q, 2 * q + 1), rng, S=q)
    X0 = decode_adjacency(int(rng.integers(0, 2 ** (q * (q - 1) // 2))), q)
    perm = rng.permutation(q)
    A, G = pr.A[0], pr.Gamma[0]
    a = logit_matrix(X0, A, pr.C[0], G)
    b = logit_matrix(X0[np.ix_(perm, perm)], A[:, perm], pr.C[0], G[np.ix_(perm, perm)])
    np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_gamma_monotone(q, seed, bump):
    rng = np.random.default_rng(seed)
    pr = random_params((q, 2 * q), rng, S=q)
    X0 = decode_adjacency(int(rng.integers(0, 2 ** (q * (q - 1) // 2))), q)
    s, t = rng.integers(0, q, size=2)
    G = pr.Gamma[0].copy()
    G[s, t] += bump
    G[t, s] = G[s, t]
    before = logit_matrix(X0, pr.A[0], pr.C[0], pr.Gamma[0])
    after = logit_matrix(X0, pr.A[0], pr.C[0], G)
    assert np.all(after >= before - 1e-12)
