"""Positive-definite linear algebra for low-rank-plus-diagonal systems.

Everything here is O(N M^2): the N x N matrix Qff + diag + noise*I is never
formed. Cholesky factorizations go through a fixed jitter escalation ladder
and always report the jitter actually used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericalError
from .kernels import KernelHyper, gram, gram_diag

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)


def chol_psd(A: np.ndarray, ladder: tuple[float, ...] = JITTER_LADDER):
    """Lower Cholesky factor of A + j*I with the smallest working jitter.

    The jitter levels are relative to mean(diag(A)). Returns (L, jitter).
    Raises NumericalError listing the attempted ladder if all levels fail.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-10 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric within tolerance")
    scale = float(np.mean(np.diag(A))) if A.shape[0] else 1.0
    if scale <= 0.0 or not np.isfinite(scale):
        scale = 1.0
    for level in ladder:
        j = level * scale
        try:
            L = sla.cholesky(A + j * np.eye(A.shape[0]), lower=True)
            return L, j
        except sla.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed at all jitter levels {[l * scale for l in ladder]}"
    )


def tri_solve(L: np.ndarray, B: np.ndarray, *, trans: bool = False) -> np.ndarray:
    """Solve L x = B (or L^T x = B) for lower-triangular L."""
    return sla.solve_triangular(L, B, lower=True, trans="T" if trans else "N")


def chol_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = B."""
    return tri_solve(L, tri_solve(L, B), trans=True)


def logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class BlockDiag:
    """Block-diagonal SPD matrix held as per-block Cholesky factors."""

    blocks: list[np.ndarray]  # index lists, one per block
    chols: list[np.ndarray]

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.blocks)

    def solve(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v, dtype=float)
        for idx, L in zip(self.blocks, self.chols):
            out[idx] = chol_solve(L, v[idx])
        return out

    def solve_mat_right(self, A: np.ndarray) -> np.ndarray:
        """A @ S^-1 for a matrix with N columns."""
        out = np.empty_like(A, dtype=float)
        for idx, L in zip(self.blocks, self.chols):
            out[:, idx] = chol_solve(L, A[:, idx].T).T
        return out

    def logdet(self) -> float:
        return float(sum(logdet_from_chol(L) for L in self.chols))

    def trace_inv(self) -> float:
        total = 0.0
        for L in self.chols:
            Linv = tri_solve(L, np.eye(L.shape[0]))
            total += float(np.sum(Linv**2))
        return total


def block_diag_factor(blocks, mats) -> BlockDiag:
    chols = []
    for idx, S in zip(blocks, mats):
        L, _ = chol_psd(S)
        chols.append(L)
    return BlockDiag(blocks=list(blocks), chols=chols)


@dataclass(frozen=True)
class LowRankSystem:
    """Cached covariance structure linking data inputs to pseudo-inputs.

    Holds K_uu (with its jittered Cholesky), K_uf, the marginal prior
    variances of f, and the residuals diag_D = diag(K_ff - Q_ff) clamped at
    zero from below. Psi = L_uu^-1 K_uf and W = K_uu^-1 K_uf are the two
    projections everything else is built from.
    """

    K_uu: np.ndarray
    K_uf: np.ndarray
    kff_diag: np.ndarray
    L_uu: np.ndarray
    jitter: float
    Psi: np.ndarray  # L_uu^-1 K_uf
    W: np.ndarray  # K_uu^-1 K_uf
    q_diag: np.ndarray  # diag of Q_ff
    diag_D: np.ndarray  # clamped residuals

    @property
    def num_pseudo(self) -> int:
        return self.K_uu.shape[0]

    @property
    def num_data(self) -> int:
        return self.K_uf.shape[1]


def build_system(X: np.ndarray, Z: np.ndarray, hyper: KernelHyper) -> LowRankSystem:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    K_uu = gram(Z, Z, hyper)
    K_uf = gram(Z, X, hyper) if X.shape[0] else np.zeros((Z.shape[0], 0))
    kff = gram_diag(X, hyper) if X.shape[0] else np.zeros(0)
    L_uu, jitter = chol_psd(K_uu)
    Psi = tri_solve(L_uu, K_uf)
    W = tri_solve(L_uu, Psi, trans=True)
    q_diag = np.sum(Psi**2, axis=0)
    diag_D = np.maximum(kff - q_diag, 0.0)
    return LowRankSystem(
        K_uu=K_uu,
        K_uf=K_uf,
        kff_diag=kff,
        L_uu=L_uu,
        jitter=jitter,
        Psi=Psi,
        W=W,
        q_diag=q_diag,
        diag_D=diag_D,
    )


def low_rank_solve_logdet(
    system: LowRankSystem,
    alpha_scaled_diag: np.ndarray,
    noise_var: float,
    rhs: np.ndarray,
):
    """Solve (Q_ff + diag(alpha_scaled_diag) + noise_var*I) x = rhs and return
    (x, log-determinant), using the matrix inversion and determinant lemmas.

    The combined diagonal must be strictly positive; a non-positive entry
    raises NumericalError naming its index.
    """
    d = np.asarray(alpha_scaled_diag, dtype=float) + float(noise_var)
    bad = np.flatnonzero(~(d > 0.0))
    if bad.size:
        raise NumericalError(f"non-positive diagonal entry at index {int(bad[0])}")
    rhs = np.asarray(rhs, dtype=float)
    Psi = system.Psi
    M = system.num_pseudo
    PsiDi = Psi / d[None, :]
    B = np.eye(M) + PsiDi @ Psi.T
    L_B, _ = chol_psd(B)
    ri = rhs / d
    t = tri_solve(L_B, PsiDi @ rhs)
    x = ri - PsiDi.T @ tri_solve(L_B, t, trans=True)
    logdet = float(np.sum(np.log(d))) + logdet_from_chol(L_B)
    return x, logdet
