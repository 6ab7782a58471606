import mpmath
import numpy as np
import pytest
import scipy.special as sp
import scipy.stats as stats
from hypothesis import given, settings
from hypothesis import strategies as st

from copulacast.errors import DegenerateSamples, DidNotConverge
from copulacast.marginals import (
    BetaParams,
    betainc,
    betaincinv,
    fit_beta_grid,
    fit_beta_mle,
    method_of_moments,
)

mpmath.mp.dps = 40


def mp_betainc(a, b, x):
    return float(mpmath.betainc(a, b, 0, x, regularized=True))


class TestIncompleteBeta:
    def test_closed_form_point(self):
        # 3z^2 - 2z^3 at z = 1/4
        assert betainc(2.0, 2.0, 0.25) == pytest.approx(0.15625, abs=1e-12)

    def test_symmetry_point(self):
        assert betainc(2.0, 2.0, 0.5) == pytest.approx(0.5, abs=1e-14)

    @given(st.floats(0.0, 1.0))
    def test_uniform(self, z):
        assert betainc(1.0, 1.0, z) == pytest.approx(z, abs=1e-12)

    @pytest.mark.parametrize("a,b", [(0.3, 0.7), (2, 5), (5, 1), (0.5, 0.5), (30, 40), (1.5, 200), (100, 2)])
    def test_against_mpmath(self, a, b):
        for x in [1e-8, 1e-3, 0.1, 0.25, 0.5, 0.77, 0.999, 1 - 1e-9]:
            assert betainc(a, b, x) == pytest.approx(mp_betainc(a, b, x), abs=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0.0, 1.0))
    def test_against_scipy(self, a, b, x):
        assert abs(betainc(a, b, x) - sp.betainc(a, b, x)) <= 1e-10

    def test_endpoints_and_vectorized(self):
        out = betainc(np.array([2.0, 3.0]), np.array([2.0, 1.0]), np.array([[0.0, 1.0], [0.5, 0.5]]))
        np.testing.assert_allclose(out, [[0.0, 1.0], [0.5, 0.125]], atol=1e-14)

    @settings(max_examples=150, deadline=None)
    @given(st.floats(0.2, 40), st.floats(0.2, 40), st.floats(1e-6, 1 - 1e-6))
    def test_inverse_round_trip(self, a, b, z):
        u = sp.betainc(a, b, z)
        # where the density is tiny, rounding in u alone moves z by more than the tolerance
        if not 1e-12 < u < 1 - 1e-12 or stats.beta(a, b).pdf(z) < 1e-3:
            return
        assert betaincinv(a, b, u) == pytest.approx(z, abs=1e-9)

    def test_inverse_symmetric_median(self):
        assert betaincinv(2.0, 2.0, 0.5) == pytest.approx(0.5, abs=1e-12)
        assert betaincinv(2.0, 5.0, 0.0) == 0.0
        assert betaincinv(2.0, 5.0, 1.0) == 1.0


class TestBetaMle:
    @pytest.mark.parametrize("a,b", [(2.0, 2.0), (5.0, 1.0), (0.6, 1.8)])
    def test_recovery_and_moment_oracle(self, a, b):
        x = np.random.default_rng(7).beta(a, b, size=100_000)
        fit = fit_beta_mle(x)
        assert fit.converged
        assert fit.alpha == pytest.approx(a, rel=0.05)
        assert fit.beta == pytest.approx(b, rel=0.05)
        m_a, m_b = method_of_moments(x)
        assert fit.alpha == pytest.approx(m_a, rel=0.1)
        assert fit.beta == pytest.approx(m_b, rel=0.1)

    def test_uniform(self):
        fit = fit_beta_mle(np.random.default_rng(3).uniform(size=100_000))
        assert 0.9 <= fit.alpha <= 1.1 and 0.9 <= fit.beta <= 1.1

    def test_matches_scipy_fit(self):
        x = np.random.default_rng(11).beta(3.0, 1.5, size=5000)
        from scipy.stats import beta as beta_dist

        a_ref, b_ref, _, _ = beta_dist.fit(x, floc=0, fscale=1)
        fit = fit_beta_mle(x)
        assert fit.alpha == pytest.approx(a_ref, rel=1e-3)
        assert fit.beta == pytest.approx(b_ref, rel=1e-3)

    def test_gradient_small_at_optimum(self):
        x = np.random.default_rng(2).beta(2.0, 7.0, size=2000)
        fit = fit_beta_mle(x, tol=1e-10)
        a, b = fit.alpha, fit.beta
        g_a = np.mean(np.log(x)) - sp.digamma(a) + sp.digamma(a + b)
        g_b = np.mean(np.log1p(-x)) - sp.digamma(b) + sp.digamma(a + b)
        assert abs(a * g_a) < 1e-8 and abs(b * g_b) < 1e-8

    def test_degenerate(self):
        with pytest.raises(DegenerateSamples):
            fit_beta_mle(np.full(10, 0.5))
        with pytest.raises(DegenerateSamples):
            fit_beta_mle([0.3])

    def test_boundary_samples_are_clamped(self):
        x = np.concatenate([np.random.default_rng(0).beta(2, 2, size=500), [0.0, 1.0]])
        fit = fit_beta_mle(x)
        assert np.isfinite(fit.loglik) and fit.alpha > 0 and fit.beta > 0

    def test_not_converged(self):
        x = np.random.default_rng(1).beta(2, 2, size=200)
        fit = fit_beta_mle(x, max_iter=0, tol=1e-300)
        assert not fit.converged
        with pytest.raises(DidNotConverge) as info:
            fit_beta_mle(x, max_iter=0, tol=1e-300, strict=True)
        assert len(info.value.best) == 2

    def test_grid(self):
        rng = np.random.default_rng(4)
        samples = np.stack([rng.beta(2, 5, size=(3000, 2)), rng.beta(5, 2, size=(3000, 2))], axis=-1)
        a, b, ok = fit_beta_grid(samples)
        assert a.shape == (2, 2) and ok.all()
        assert np.all(a[:, 0] < b[:, 0]) and np.all(a[:, 1] > b[:, 1])

    def test_params_positive(self):
        with pytest.raises(ValueError):
            BetaParams(0.0, 1.0)
