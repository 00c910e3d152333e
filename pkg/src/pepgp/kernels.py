"""ARD squared-exponential covariance, its Gram matrices and gradients.

Hyper-parameters live in log space so that downstream optimizers can work
unconstrained; `KernelHyper` is the single record passed around the library.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class KernelHyper:
    """ARD squared-exponential hyper-parameters plus observation noise.

    All fields are logs of the underlying positive quantities:
    per-dimension lengthscales, signal variance and noise variance.
    """

    log_lengthscales: np.ndarray
    log_signal_var: float
    log_noise_var: float

    def __post_init__(self):
        lls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float))
        object.__setattr__(self, "log_lengthscales", lls)
        if not np.all(np.isfinite(lls)):
            raise ValueError("log-lengthscales must be finite")
        if not np.isfinite(self.log_signal_var):
            raise ValueError("log signal variance must be finite")
        if not np.isfinite(self.log_noise_var):
            raise ValueError("log noise variance must be finite")

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_var(self) -> float:
        return float(np.exp(self.log_signal_var))

    @property
    def noise_var(self) -> float:
        return float(np.exp(self.log_noise_var))


@dataclass(frozen=True)
class PseudoInputs:
    """Locations of the M pseudo-inputs, one row per point."""

    Z: np.ndarray = field()

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if Z.shape[0] < 1:
            raise ValueError("need at least one pseudo-input")
        if not np.all(np.isfinite(Z)):
            raise ValueError("pseudo-inputs contain non-finite values")
        object.__setattr__(self, "Z", Z)

    @property
    def num(self) -> int:
        return self.Z.shape[0]


def _check_inputs(X: np.ndarray, dim: int, name: str) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} columns, expected {dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def se_ard(x: np.ndarray, x2: np.ndarray, hyper: KernelHyper) -> float:
    """Covariance sf2 * exp(-0.5 * sum_d (x_d - x2_d)^2 / ell_d^2)."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape[0] != hyper.dim or x2.shape[0] != hyper.dim:
        raise ValueError("input dimensionality does not match hyper-parameters")
    r = (x - x2) / hyper.lengthscales
    return hyper.signal_var * float(np.exp(-0.5 * np.dot(r, r)))


def _scaled_sqdist(X1: np.ndarray, X2: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """Pairwise squared distance of lengthscale-scaled inputs, clipped at 0."""
    A = X1 / ell
    B = X2 / ell
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.maximum(sq, 0.0)


def gram(X1: np.ndarray, X2: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """Gram matrix with entry (i, j) = se_ard(X1[i], X2[j])."""
    X1 = _check_inputs(X1, hyper.dim, "X1")
    X2 = _check_inputs(X2, hyper.dim, "X2")
    return hyper.signal_var * np.exp(-0.5 * _scaled_sqdist(X1, X2, hyper.lengthscales))


def gram_diag(X: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """Diagonal of gram(X, X): constant sf2 for a stationary kernel."""
    X = _check_inputs(X, hyper.dim, "X")
    return np.full(X.shape[0], hyper.signal_var)


@dataclass(frozen=True)
class GramGrads:
    """Entrywise derivatives of a Gram matrix w.r.t. each parameter.

    ``log_lengthscales[d]`` and ``log_signal_var`` match the Gram shape;
    ``x1`` (present when requested) has shape (n1, D, n2) and holds the
    derivative w.r.t. each coordinate of the first input set.
    """

    log_lengthscales: np.ndarray  # (D, n1, n2)
    log_signal_var: np.ndarray  # (n1, n2)
    x1: np.ndarray | None = None  # (n1, D, n2)


def gram_grads(
    X1: np.ndarray,
    X2: np.ndarray,
    hyper: KernelHyper,
    *,
    wrt_x1: bool = False,
) -> GramGrads:
    """Derivatives of ``gram(X1, X2, hyper)``.

    For the log-lengthscales the chain rule gives K * (x_d - x'_d)^2 / ell_d^2;
    for the log signal variance the derivative is the Gram matrix itself.
    With ``wrt_x1`` the per-coordinate derivatives K * (x'_d - x_d) / ell_d^2
    are returned as well (used when the first inputs are pseudo-inputs being
    optimized).
    """
    X1 = _check_inputs(X1, hyper.dim, "X1")
    X2 = _check_inputs(X2, hyper.dim, "X2")
    K = gram(X1, X2, hyper)
    ell2 = hyper.lengthscales**2
    D = hyper.dim
    dll = np.empty((D, X1.shape[0], X2.shape[0]))
    for d in range(D):
        diff = X1[:, d][:, None] - X2[:, d][None, :]
        dll[d] = K * diff**2 / ell2[d]
    dx1 = None
    if wrt_x1:
        dx1 = np.empty((X1.shape[0], D, X2.shape[0]))
        for d in range(D):
            diff = X2[:, d][None, :] - X1[:, d][:, None]
            dx1[:, d, :] = K * diff / ell2[d]
    return GramGrads(log_lengthscales=dll, log_signal_var=K, x1=dx1)
