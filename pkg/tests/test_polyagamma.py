import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mplex.polyagamma import pg1_mean, pg1_var, sample_pg1, sample_pg1_array


class TestMoments:
    @pytest.mark.parametrize("c", [0.0, 1.0, 3.0])
    def test_mean_within_four_se(self, c):
        rng = np.random.default_rng(101)
        w = sample_pg1_array(np.full(100_000, c), rng)
        se = w.std(ddof=1) / np.sqrt(w.size)
        assert abs(w.mean() - pg1_mean(c)) < 4 * se

    def test_variance_at_zero(self):
        rng = np.random.default_rng(7)
        w = sample_pg1_array(np.zeros(100_000), rng)
        # SE of the sample variance from the fourth central moment
        d = w - w.mean()
        se = np.sqrt((np.mean(d**4) - np.var(w) ** 2) / w.size)
        assert abs(w.var(ddof=1) - 1 / 24) < 4 * se

    def test_closed_forms(self):
        np.testing.assert_allclose(pg1_mean(3.0), np.tanh(1.5) / 6, rtol=1e-14)
        assert pg1_mean(0.0) == 0.25
        assert pg1_var(0.0) == pytest.approx(1 / 24)
        # series limit and direct formula agree near the switch point
        np.testing.assert_allclose(pg1_var(0.0099), pg1_var(0.0101), rtol=1e-4)
        c = 2.0
        direct = (np.sinh(c) - c) / (4 * c**3 * np.cosh(c / 2) ** 2)
        np.testing.assert_allclose(pg1_var(c), direct, rtol=1e-12)

    def test_large_c_is_finite(self):
        rng = np.random.default_rng(0)
        w = sample_pg1_array(np.array([50.0, 500.0, -500.0]), rng)
        assert np.all(np.isfinite(w)) and np.all(w > 0)
        assert np.isfinite(pg1_var(800.0))


class TestSymmetry:
    def test_sign_of_c_irrelevant(self):
        a = sample_pg1_array(np.full(10_000, 1.7), np.random.default_rng(3))
        b = sample_pg1_array(np.full(10_000, -1.7), np.random.default_rng(3))
        res = stats.ks_2samp(a, b)
        # two-sample 1% critical value
        crit = 1.628 * np.sqrt(2 / 10_000)
        assert res.statistic < crit


class TestTiltingIdentity:
    @pytest.mark.parametrize("psi", [0.5, 1.0, 2.0])
    def test_laplace_transform(self, psi):
        w = sample_pg1_array(np.zeros(100_000), np.random.default_rng(11))
        vals = np.exp(-w * psi**2 / 2)
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - 1 / np.cosh(psi / 2)) < 4 * se


class TestDeterminism:
    def test_same_seed_same_draws(self):
        c = np.linspace(-4, 4, 50)
        a = sample_pg1_array(c, np.random.default_rng(5))
        b = sample_pg1_array(c, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_scalar_matches_first_array_draw(self):
        x = sample_pg1(0.3, np.random.default_rng(9))
        y = sample_pg1_array(np.array([0.3]), np.random.default_rng(9))[0]
        assert x == y

    def test_no_anomalies_in_normal_use(self):
        _, n_bad = sample_pg1_array(np.full(5000, 2.0), np.random.default_rng(1), return_anomalies=True)
        assert n_bad == 0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            sample_pg1(np.nan, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_pg1_array([1.0, np.inf], np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.floats(-30, 30), st.integers(0, 2**31 - 1))
def test_draws_positive(c, seed):
    w = sample_pg1_array(np.full(20, c), np.random.default_rng(seed))
    assert np.all(w > 0)
    assert np.all(np.isfinite(w))


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 50))
def test_moment_formulas_sane(c):
    m, v = pg1_mean(c), pg1_var(c)
    assert 0 < m <= 0.25
    assert 0 < v <= 1 / 24 + 1e-15
