"""Closed-form posteriors and energies for Gaussian regression.

The collapsed objective family covers FITC (alpha=1, singleton blocks),
PITC (alpha=1, general blocks), VFE (alpha=0) and everything in between;
alpha = 0 is always dispatched to the analytic limit rather than a small
numeric power. Also: the dense exact-GP baseline and the recovery of the
surrogate regression problem implied by a posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, StateError
from .kernels import KernelHyper, gram, gram_diag
from .linalg import (
    BlockDiag,
    LowRankSystem,
    block_diag_factor,
    build_system,
    chol_psd,
    chol_solve,
    logdet_from_chol,
    tri_solve,
)
from .power_ep import PosteriorState

_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint, exhaustive assignment of data indices to blocks, with one
    power per block. alpha_b = 0 selects the variational (exclusive-KL)
    treatment of that block."""

    blocks: list
    alphas: np.ndarray

    def __post_init__(self):
        blocks = [np.asarray(b, dtype=int) for b in self.blocks]
        object.__setattr__(self, "blocks", blocks)
        alphas = np.asarray(self.alphas, dtype=float).ravel()
        object.__setattr__(self, "alphas", alphas)
        if len(blocks) != alphas.shape[0]:
            raise ValueError("need one alpha per block")
        if np.any((alphas < 0.0) | (alphas > 1.0)):
            raise ValueError("block powers must lie in [0, 1]")

    @property
    def num_data(self) -> int:
        return sum(len(b) for b in self.blocks)

    def validate(self, n: int, max_block: int | None = None):
        seen = np.concatenate(self.blocks) if self.blocks else np.array([], dtype=int)
        if seen.size != n or np.any(np.sort(seen) != np.arange(n)):
            raise ValueError("blocks must partition 0..N-1 exactly")
        if max_block is not None:
            sizes = [len(b) for b in self.blocks]
            if sizes and max(sizes) > max_block:
                raise ValueError(
                    f"largest block ({max(sizes)}) exceeds the number of"
                    f" pseudo-points ({max_block})"
                )


def singleton_partition(n: int, alpha: float) -> BlockPartition:
    return BlockPartition(blocks=[[i] for i in range(n)], alphas=np.full(n, alpha))


def contiguous_partition(n: int, num_blocks: int, alpha: float) -> BlockPartition:
    """Equal-size contiguous index blocks (the default PITC layout)."""
    if not 1 <= num_blocks <= max(n, 1):
        raise ValueError("number of blocks must lie in [1, N]")
    blocks = [b.tolist() for b in np.array_split(np.arange(n), num_blocks)]
    return BlockPartition(blocks=blocks, alphas=np.full(num_blocks, alpha))


def _block_residuals(system: LowRankSystem, partition: BlockPartition, hyper, X):
    """Per-block D_b = K_bb - Q_bb (dense within the block)."""
    mats = []
    for b in partition.blocks:
        if len(b) == 1:
            mats.append(np.array([[system.diag_D[b[0]]]]))
            continue
        Kbb = gram(X[b], X[b], hyper)
        Psi_b = system.Psi[:, b]
        Db = Kbb - Psi_b.T @ Psi_b
        mats.append((Db + Db.T) / 2.0)
    return mats


@dataclass(frozen=True)
class _Collapsed:
    system: LowRankSystem
    S: BlockDiag
    L_B: np.ndarray
    PsiSi: np.ndarray
    D_blocks: list
    correction: float


def _collapse(X, y, Z, hyper: KernelHyper, partition: BlockPartition) -> _Collapsed:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    system = build_system(X, Z, hyper)
    N, M = system.num_data, system.num_pseudo
    partition.validate(N, max_block=M)
    sigma2 = hyper.noise_var
    D_blocks = _block_residuals(system, partition, hyper, X)
    S_mats = []
    correction = 0.0
    for b, a, Db in zip(partition.blocks, partition.alphas, D_blocks):
        nb = len(b)
        if a == 0.0:
            S_mats.append(sigma2 * np.eye(nb))
            correction += float(np.trace(Db)) / (2.0 * sigma2)
        else:
            Sb = a * Db + sigma2 * np.eye(nb)
            S_mats.append(Sb)
    S = block_diag_factor(partition.blocks, S_mats)
    for b, a, L in zip(partition.blocks, partition.alphas, S.chols):
        if a > 0.0:
            # logdet(I + a*D_b/sigma2) = logdet(S_b) - n_b*log(sigma2)
            correction += ((1.0 - a) / (2.0 * a)) * (
                logdet_from_chol(L) - len(b) * np.log(sigma2)
            )
    PsiSi = S.solve_mat_right(system.Psi)
    B = np.eye(M) + PsiSi @ system.Psi.T
    L_B, _ = chol_psd(B)
    return _Collapsed(system, S, L_B, PsiSi, D_blocks, correction)


def collapsed_posterior(
    X, y, Z, hyper: KernelHyper, partition: BlockPartition | None = None, alpha: float = 1.0
) -> PosteriorState:
    """Analytic Gaussian-regression posterior for K_bar = Q + blkdiag(a_b D_b)
    + sigma2*I, in O(N M^2). Default partition: singletons at the given alpha."""
    y = np.asarray(y, dtype=float).ravel()
    if partition is None:
        partition = singleton_partition(y.shape[0], alpha)
    col = _collapse(X, y, Z, hyper, partition)
    sys_ = col.system
    M = sys_.num_pseudo
    Li = tri_solve(sys_.L_uu, np.eye(M))
    Binv = tri_solve(col.L_B, tri_solve(col.L_B, np.eye(M)), trans=True)
    gamma = Li.T @ (Binv @ (col.PsiSi @ y))
    beta = Li.T @ (np.eye(M) - Binv) @ Li
    return PosteriorState(gamma=gamma, beta=(beta + beta.T) / 2.0, system=sys_)


def pep_regression_energy(
    X, y, Z, hyper: KernelHyper, partition: BlockPartition | None = None, alpha: float = 1.0
) -> float:
    """Closed-form approximate log-marginal likelihood
    -N/2 log(2 pi) - 1/2 log|K_bar| - 1/2 y^T K_bar^-1 y
    - sum_b (1-a_b)/(2 a_b) logdet(I + a_b D_b / sigma2),
    with the a_b -> 0 blocks contributing the trace penalty instead."""
    y = np.asarray(y, dtype=float).ravel()
    if partition is None:
        partition = singleton_partition(y.shape[0], alpha)
    col = _collapse(X, y, Z, hyper, partition)
    N = y.shape[0]
    Siy = col.S.solve(y)
    t = tri_solve(col.L_B, col.system.Psi @ Siy)
    quad = float(y @ Siy) - float(t @ t)
    logdet = col.S.logdet() + logdet_from_chol(col.L_B)
    return float(-0.5 * N * _LOG2PI - 0.5 * logdet - 0.5 * quad - col.correction)


def vfe_energy(X, y, Z, hyper: KernelHyper) -> float:
    """Variational free energy: the alpha -> 0 limit of the collapsed family,
    -N/2 log(2 pi) - 1/2 log|Q+s2 I| - 1/2 y^T (Q+s2 I)^-1 y - tr(K-Q)/(2 s2)."""
    y = np.asarray(y, dtype=float).ravel()
    return pep_regression_energy(
        X, y, Z, hyper, singleton_partition(y.shape[0], 0.0)
    )


def exact_gp_logml(X, y, hyper: KernelHyper) -> float:
    """Dense log-marginal likelihood of full GP regression (the O(N^3) oracle)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    N = y.shape[0]
    K = gram(X, X, hyper) + hyper.noise_var * np.eye(N)
    L, _ = chol_psd(K)
    a = chol_solve(L, y)
    return float(-0.5 * N * _LOG2PI - 0.5 * logdet_from_chol(L) - 0.5 * y @ a)


def exact_gp_predict(X, y, hyper: KernelHyper, Xstar):
    """Dense predictive mean/variance of full GP regression."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    K = gram(X, X, hyper) + hyper.noise_var * np.eye(y.shape[0])
    L, _ = chol_psd(K)
    Ks = gram(Xstar, X, hyper)
    mean = Ks @ chol_solve(L, y)
    V = tri_solve(L, Ks.T)
    var = gram_diag(Xstar, hyper) - np.sum(V**2, axis=0)
    return mean, np.maximum(var, 0.0)


@dataclass(frozen=True)
class SurrogateModel:
    """M surrogate observations y~ = W~ u + noise(Sigma~) whose exact GP
    posterior and marginal likelihood reproduce a given approximation."""

    y_tilde: np.ndarray
    W_tilde: np.ndarray
    Sigma_tilde: np.ndarray


def surrogate_recover(state: PosteriorState, energy: float) -> SurrogateModel:
    """Recover (y~, W~, Sigma~) from a posterior and its energy.

    The precision difference R = V_u^-1 - K_uu^-1 must be PSD and nonsingular
    (flat or near-flat sites make the problem degenerate). Sigma~ is diagonal,
    scaled so the surrogate log-marginal likelihood equals the energy.
    """
    sys_ = state.system
    M = sys_.num_pseudo
    L_u = sys_.L_uu
    Bt = L_u.T @ state.beta @ L_u
    ImB = np.eye(M) - (Bt + Bt.T) / 2.0
    try:
        L_I, _ = chol_psd(ImB, ladder=(0.0, 1e-12))
    except Exception as exc:
        raise StateError("posterior covariance is not positive definite") from exc
    C = chol_solve(L_I, np.eye(M)) - np.eye(M)
    C = (C + C.T) / 2.0
    eigs = np.linalg.eigvalsh(C)
    scale = max(1.0, float(np.abs(eigs).max()))
    if eigs.min() < -1e-9 * scale:
        raise DegeneracyError("posterior precision is not above the prior precision")
    if eigs.max() <= 1e-12:
        raise DegeneracyError("posterior equals the prior (flat sites): R = 0")
    Li = tri_solve(L_u, np.eye(M))
    R = Li.T @ C @ Li
    R = (R + R.T) / 2.0
    try:
        L_R, _ = chol_psd(R, ladder=(0.0, 1e-14, 1e-12))
    except Exception as exc:
        raise DegeneracyError("R = V^-1 - K_uu^-1 is singular") from exc
    # eta = V^-1 m, quad = m^T V^-1 R^-1 V^-1 m (independent of Sigma~)
    eta = Li.T @ chol_solve(L_I, L_u.T @ state.gamma)
    t = tri_solve(L_R, eta)
    quad = float(t @ t)
    logdet_VK = logdet_from_chol(L_I)  # log|V| - log|K_uu| = log|I - B~|
    m_quad = float((L_u.T @ state.gamma) @ chol_solve(L_I, L_u.T @ state.gamma))
    g_diff = 0.5 * logdet_VK + 0.5 * m_quad  # G(q) - G(p)
    log_det_sigma = 2.0 * g_diff - M * _LOG2PI - 2.0 * float(energy) - quad
    sigma_t2 = float(np.exp(log_det_sigma / M))
    sigma_t = np.sqrt(sigma_t2)
    W_tilde = sigma_t * L_R.T
    y_tilde = sigma_t * t
    return SurrogateModel(
        y_tilde=y_tilde, W_tilde=W_tilde, Sigma_tilde=sigma_t2 * np.eye(M)
    )
