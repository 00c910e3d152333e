import numpy as np
import pytest

from pepgp import KernelHyper


def random_hyper(rng, dim):
    return KernelHyper(
        log_lengthscales=rng.uniform(-0.3, 0.5, size=dim),
        log_signal_var=rng.uniform(-0.5, 0.5),
        log_noise_var=rng.uniform(-2.5, -1.0),
    )


def random_instance(rng, n, m, dim=2):
    """Random inputs, pseudo-inputs and GP-drawn targets for regression."""
    X = rng.uniform(-2.0, 2.0, size=(n, dim))
    Z = rng.uniform(-2.0, 2.0, size=(m, dim))
    h = random_hyper(rng, dim)
    from pepgp import gram

    K = gram(X, X, h) + 1e-10 * np.eye(n)
    f = np.linalg.cholesky(K) @ rng.standard_normal(n)
    y = f + np.sqrt(h.noise_var) * rng.standard_normal(n)
    return X, y, Z, h


@pytest.fixture
def rng():
    return np.random.default_rng(0)
