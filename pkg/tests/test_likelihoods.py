import numpy as np
import pytest
from scipy.stats import norm

from pepgp import (
    GaussianLikelihood,
    ProbitLikelihood,
    gaussian_tilted,
    probit_tilted_analytic,
    probit_tilted_quad,
)
from pepgp.errors import CavityError


def gh_log_integral(m, v, log_factor, nodes=400):
    """Oracle: log of int N(f; m, v) exp(log_factor(f)) df by Gauss-Hermite."""
    from scipy.special import roots_hermite

    x, w = roots_hermite(nodes)
    keep = w > 0
    x, w = x[keep], w[keep]
    f = m + np.sqrt(2.0 * v) * x
    logt = np.log(w) + log_factor(f)
    top = logt.max()
    return top + np.log(np.sum(np.exp(logt - top))) - 0.5 * np.log(np.pi)


def fd_moments(fn, m, step=1e-5):
    f0, fp, fm = fn(m), fn(m + step), fn(m - step)
    d1 = (fp - fm) / (2 * step)
    d2 = (fp - 2 * f0 + fm) / step**2
    return d1, d2


class TestGaussianTilted:
    def test_residual_zero_gives_zero_d1(self):
        tm = gaussian_tilted(0.8, 0.5, 0.8, 0.7, 0.2)
        assert tm.d1 == 0.0

    def test_delta_cavity_is_plain_log_density(self):
        tm = gaussian_tilted(0.3, 0.0, 1.1, 1.0, 0.4)
        assert tm.logZ == pytest.approx(norm.logpdf(1.1, 0.3, np.sqrt(0.4)), rel=1e-12)

    def test_matches_quadrature_oracle(self):
        sigma2 = 1.0
        tm = gaussian_tilted(0.0, 1.0, 1.0, 0.5, sigma2)
        oracle = gh_log_integral(
            0.0, 1.0, lambda f: 0.5 * norm.logpdf(1.0, f, np.sqrt(sigma2))
        )
        assert tm.logZ == pytest.approx(oracle, abs=1e-10)

    @pytest.mark.parametrize("m,v,y,a,s2", [
        (0.0, 1.0, 1.0, 0.5, 1.0),
        (-1.2, 0.3, 0.7, 1.0, 0.05),
        (2.0, 4.0, -3.0, 0.1, 2.0),
    ])
    def test_exactness_against_quadrature_grid(self, m, v, y, a, s2):
        tm = gaussian_tilted(m, v, y, a, s2)
        oracle = gh_log_integral(m, v, lambda f: a * norm.logpdf(y, f, np.sqrt(s2)))
        assert tm.logZ == pytest.approx(oracle, abs=1e-10)
        d1, d2 = fd_moments(lambda mm: gaussian_tilted(mm, v, y, a, s2).logZ, m)
        assert tm.d1 == pytest.approx(d1, rel=1e-6, abs=1e-8)
        assert tm.d2 == pytest.approx(d2, rel=1e-4, abs=1e-6)

    def test_negative_cavity_variance_rejected(self):
        with pytest.raises(CavityError):
            gaussian_tilted(0.0, -0.1, 1.0, 1.0, 1.0)


class TestProbitQuad:
    @pytest.mark.parametrize("v", [0.1, 1.0, 10.0])
    def test_symmetric_cavity_gives_half(self, v):
        tm = probit_tilted_quad(0.0, v, 1.0, 1.0)
        assert tm.logZ == pytest.approx(np.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("y", [-1.0, 1.0])
    @pytest.mark.parametrize("v", [0.1, 1.0, 10.0])
    def test_alpha_one_matches_analytic(self, y, v):
        for m in np.linspace(-4, 4, 9):
            quad = probit_tilted_quad(m, v, y, 1.0, 60)
            ana = probit_tilted_analytic(m, v, y)
            assert quad.logZ == pytest.approx(ana.logZ, abs=1e-10)
            assert quad.d1 == pytest.approx(ana.d1, abs=1e-8)
            assert quad.d2 == pytest.approx(ana.d2, abs=1e-8)

    @pytest.mark.parametrize("y", [-1.0, 1.0])
    @pytest.mark.parametrize("m,v,a", [
        (0.5, 0.8, 0.5), (-2.0, 2.0, 0.3), (1.5, 0.2, 1.0), (3.0, 5.0, 0.7),
    ])
    def test_derivatives_match_finite_differences(self, y, m, v, a):
        tm = probit_tilted_quad(m, v, y, a, 60)
        d1, d2 = fd_moments(lambda mm: probit_tilted_quad(mm, v, y, a, 60).logZ, m)
        assert tm.d1 == pytest.approx(d1, rel=1e-6, abs=1e-7)
        assert tm.d2 == pytest.approx(d2, rel=1e-3, abs=1e-5)

    def test_quadrature_converged_at_default_node_count(self):
        for m in np.linspace(-6, 6, 7):
            for v in (1e-3, 0.1, 1.0, 10.0):
                for a in (0.1, 0.5, 1.0):
                    z20 = probit_tilted_quad(m, v, 1.0, a, 20).logZ
                    z100 = probit_tilted_quad(m, v, 1.0, a, 100).logZ
                    assert abs(z20 - z100) <= 1e-8

    def test_log_concavity_over_grid(self):
        for m in np.linspace(-6, 6, 13):
            for v in (1e-2, 1.0, 10.0):
                for a in (0.1, 0.5, 1.0):
                    assert probit_tilted_quad(m, v, -1.0, a, 30).d2 <= 0.0
                    assert gaussian_tilted(m, v, 0.3, a, 0.5).d2 <= 0.0


class TestProbitAnalytic:
    def test_delta_cavity_at_zero_mean(self):
        tm = probit_tilted_analytic(0.0, 0.0, 1.0)
        assert np.exp(tm.logZ) == pytest.approx(0.5, rel=1e-12)

    def test_hand_value(self):
        tm = probit_tilted_analytic(1.0, 1.0, 1.0)
        assert np.exp(tm.logZ) == pytest.approx(0.7602499389, abs=1e-9)

    def test_saturation_for_large_z(self):
        tm = probit_tilted_analytic(50.0, 0.5, 1.0)
        assert np.exp(tm.logZ) == pytest.approx(1.0, abs=1e-12)
        assert abs(tm.d1) < 1e-100

    def test_extreme_negative_z_stays_finite(self):
        tm = probit_tilted_analytic(-40.0, 0.5, 1.0)
        assert np.isfinite(tm.logZ) and np.isfinite(tm.d1) and np.isfinite(tm.d2)
        assert tm.d1 > 0.0 and tm.d2 < 0.0

    @pytest.mark.parametrize("y", [-1.0, 1.0])
    def test_derivatives_match_finite_differences(self, y):
        for m in (-1.5, 0.2, 2.0):
            tm = probit_tilted_analytic(m, 0.7, y)
            d1, d2 = fd_moments(lambda mm: probit_tilted_analytic(mm, 0.7, y).logZ, m)
            assert tm.d1 == pytest.approx(d1, rel=1e-6, abs=1e-8)
            assert tm.d2 == pytest.approx(d2, rel=1e-3, abs=1e-5)


class TestVariationalLimit:
    def test_small_alpha_recovers_expected_log_likelihood(self):
        # (1/alpha) logZ at alpha=1e-4 ~ E_cavity[log p(y|f)]
        m, v = 0.4, 0.9
        a = 1e-4
        g = gaussian_tilted(m, v, 1.3, a, 0.6)
        oracle = gh_log_integral(m, v, lambda f: np.zeros_like(f)) + 0.0
        exp_loglik = _expected_loglik(m, v, lambda f: norm.logpdf(1.3, f, np.sqrt(0.6)))
        assert g.logZ / a == pytest.approx(exp_loglik, abs=1e-3)
        p = probit_tilted_quad(m, v, 1.0, a, 60)
        exp_loglik_p = _expected_loglik(m, v, lambda f: norm.logcdf(f))
        assert p.logZ / a == pytest.approx(exp_loglik_p, abs=1e-3)


def _expected_loglik(m, v, loglik, nodes=200):
    x, w = np.polynomial.hermite.hermgauss(nodes)
    f = m + np.sqrt(2.0 * v) * x
    return float(np.sum(w * loglik(f)) / np.sqrt(np.pi))


class TestLikelihoodObjects:
    def test_probit_label_normalization(self):
        np.testing.assert_allclose(
            ProbitLikelihood.normalize_labels([0, 1, 1, 0]), [-1, 1, 1, -1]
        )
        np.testing.assert_allclose(
            ProbitLikelihood.normalize_labels([-1, 1]), [-1, 1]
        )
        with pytest.raises(ValueError):
            ProbitLikelihood.normalize_labels([0, 2])

    def test_gaussian_validation(self):
        with pytest.raises(ValueError):
            GaussianLikelihood(-1.0)

    def test_probit_dispatches_analytic_at_alpha_one(self):
        lik = ProbitLikelihood(num_nodes=20)
        tm = lik.tilted(1.0, 0.3, 0.8, 1.0)
        ana = probit_tilted_analytic(0.3, 0.8, 1.0)
        assert tm.logZ == ana.logZ
