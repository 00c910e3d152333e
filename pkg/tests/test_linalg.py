import dataclasses

import numpy as np
import pytest

from pepgp import KernelHyper, build_system, chol_psd, gram, low_rank_solve_logdet
from pepgp.errors import NumericalError

from conftest import random_hyper, random_instance


class TestCholPsd:
    def test_identity_no_jitter(self):
        L, j = chol_psd(np.eye(4))
        np.testing.assert_allclose(L, np.eye(4))
        assert j == 0.0

    def test_hand_cholesky(self):
        A = np.array([[4.0, 2.0], [2.0, 5.0]])
        L, j = chol_psd(A)
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, 2.0]], rtol=1e-14)
        assert j == 0.0

    def test_rank_deficient_reports_positive_jitter(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        L, j = chol_psd(A)
        assert j > 0.0
        np.testing.assert_allclose(L @ L.T, A + j * np.eye(2), rtol=1e-12)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            chol_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_all_jitters_fail_raises_with_ladder(self):
        A = -np.eye(2)
        with pytest.raises(NumericalError):
            chol_psd(A)

    @pytest.mark.parametrize("seed", range(5))
    def test_gram_plus_noise_needs_no_jitter(self, seed):
        # gram(X,X) + noise*I is PD whenever the noise floor is sane
        rng = np.random.default_rng(seed)
        h = random_hyper(rng, 2)
        X = rng.uniform(-1, 1, size=(30, 2))
        A = gram(X, X, h) + max(h.noise_var, 1e-8 * h.signal_var) * np.eye(30)
        _, j = chol_psd(A)
        assert j == 0.0


class TestBuildSystem:
    def test_residuals_zero_when_pseudo_equals_data(self, rng):
        h = random_hyper(rng, 2)
        X = rng.standard_normal((12, 2))
        sys_ = build_system(X, X, h)
        np.testing.assert_allclose(sys_.diag_D, 0.0, atol=1e-9)

    def test_residuals_nonnegative(self, rng):
        X, _, Z, h = random_instance(rng, 40, 6)
        sys_ = build_system(X, Z, h)
        assert np.all(sys_.diag_D >= 0.0)
        # W = K_uu^-1 K_uf
        np.testing.assert_allclose(sys_.K_uu @ sys_.W, sys_.K_uf, atol=1e-10)


class TestLowRankSolveLogdet:
    def test_zero_cross_covariance_reduces_to_diagonal(self, rng):
        X, y, Z, h = random_instance(rng, 10, 3)
        sys_ = build_system(X, Z, h)
        sys_ = dataclasses.replace(
            sys_, K_uf=np.zeros_like(sys_.K_uf), Psi=np.zeros_like(sys_.Psi)
        )
        d = rng.uniform(0.5, 2.0, size=10)
        x, logdet = low_rank_solve_logdet(sys_, d, 0.3, y)
        np.testing.assert_allclose(x, y / (d + 0.3), rtol=1e-12)
        assert logdet == pytest.approx(np.sum(np.log(d + 0.3)), rel=1e-12)

    def test_zero_rhs_gives_zero_solution(self, rng):
        X, _, Z, h = random_instance(rng, 8, 3)
        sys_ = build_system(X, Z, h)
        x, _ = low_rank_solve_logdet(sys_, sys_.diag_D, h.noise_var, np.zeros(8))
        np.testing.assert_allclose(x, 0.0)

    @pytest.mark.parametrize("seed,n,m", [(0, 50, 5), (1, 120, 12), (2, 200, 20)])
    def test_matches_dense_oracle(self, seed, n, m):
        rng = np.random.default_rng(seed)
        X, y, Z, h = random_instance(rng, n, m)
        sys_ = build_system(X, Z, h)
        alpha_diag = 0.7 * sys_.diag_D
        x, logdet = low_rank_solve_logdet(sys_, alpha_diag, h.noise_var, y)
        Q = sys_.K_uf.T @ np.linalg.solve(sys_.K_uu + sys_.jitter * np.eye(m), sys_.K_uf)
        Kbar = Q + np.diag(alpha_diag) + h.noise_var * np.eye(n)
        x_dense = np.linalg.solve(Kbar, y)
        _, logdet_dense = np.linalg.slogdet(Kbar)
        np.testing.assert_allclose(x, x_dense, rtol=1e-8, atol=1e-10)
        assert logdet == pytest.approx(logdet_dense, rel=1e-8)

    def test_nonpositive_diagonal_names_index(self, rng):
        X, y, Z, h = random_instance(rng, 6, 2)
        sys_ = build_system(X, Z, h)
        bad = np.ones(6)
        bad[3] = -1.0
        with pytest.raises(NumericalError, match="index 3"):
            low_rank_solve_logdet(sys_, bad, 0.0, y)
