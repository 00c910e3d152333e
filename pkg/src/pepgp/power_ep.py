"""Power-EP over pseudo-point sites: deletion, projection, site updates,
sweeps, prediction and the (non-collapsed) energy.

The posterior over the M pseudo-points is summarized by (gamma, beta):
mean(x) = k(x,Z) gamma and cov(x,x') = k(x,x') - k(x,Z) beta k(Z,x'). Each
likelihood term contributes a rank-1 site N(w_n^T u; g_n, v_n) with
w_n = K_uu^-1 k_n; v_n = +inf encodes an uninitialized (flat) site. The
running posterior is kept consistent with prior * prod_n t_n at all times,
so a sweep updates (gamma, beta) by rank-1 conditioning against each cavity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CavityError, SiteUpdateError, StateError
from .kernels import gram, gram_diag
from .linalg import LowRankSystem, build_system, chol_psd, logdet_from_chol, tri_solve

MIN_ALPHA = 1e-6


@dataclass
class SiteFactor:
    """Rank-1 Gaussian approximate likelihood over the pseudo-points.

    g is the site pseudo-observation of w_n^T u, v its variance; v = inf
    means the site is flat (carries no information yet).
    """

    g: float
    v: float
    index: int

    @property
    def is_flat(self) -> bool:
        return np.isinf(self.v)

    @property
    def tau(self) -> float:
        """Natural precision 1/v (0 for a flat site)."""
        return 0.0 if self.is_flat else 1.0 / self.v

    @property
    def eta(self) -> float:
        """Natural precision-mean g/v (0 for a flat site)."""
        return 0.0 if self.is_flat else self.g / self.v


@dataclass
class PosteriorState:
    """Natural-form posterior summary (gamma, beta) tied to a system cache."""

    gamma: np.ndarray
    beta: np.ndarray
    system: LowRankSystem

    def copy(self) -> "PosteriorState":
        return PosteriorState(self.gamma.copy(), self.beta.copy(), self.system)

    def marginal(self, n: int):
        """Posterior mean/variance of f at training input n."""
        k = self.system.K_uf[:, n]
        m = float(k @ self.gamma)
        v = float(self.system.kff_diag[n] - k @ self.beta @ k)
        return m, v

    def proj_var(self, n: int) -> float:
        """Variance of w_n^T u (the marginal of f minus the residual D_nn)."""
        k = self.system.K_uf[:, n]
        return float(self.system.q_diag[n] - k @ self.beta @ k)


@dataclass
class CavityState:
    """Posterior with an alpha-fraction of one site removed, plus the cavity
    marginal of f at that datum."""

    gamma: np.ndarray
    beta: np.ndarray
    index: int
    m_f: float
    v_f: float
    system: LowRankSystem

    @property
    def proj_var(self) -> float:
        return self.v_f - float(self.system.diag_D[self.index])


@dataclass
class PEPConfig:
    """Controls for the iterative loop.

    alpha is clamped to >= 1e-6 (the exact alpha -> 0 limit is served by the
    analytic free-energy path in the regression module). damping < 1 blends
    old and proposed site natural parameters; damping = alpha reproduces the
    fractional-inclusion recombination exactly.
    """

    alpha: float = 1.0
    damping: float | None = None  # None: 1.0 for Gaussian, 0.5 otherwise
    tol: float = 1e-6
    max_sweeps: int = 100
    parallel_updates: bool = False
    minibatch_size: int | None = None
    alpha_per_site: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.damping is not None and not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        self.alpha = max(self.alpha, MIN_ALPHA)

    def site_alphas(self, n: int) -> np.ndarray:
        if self.alpha_per_site is not None:
            a = np.asarray(self.alpha_per_site, dtype=float)
            if a.shape != (n,):
                raise ValueError("alpha_per_site must have one entry per datum")
            return np.maximum(a, MIN_ALPHA)
        return np.full(n, self.alpha)

    def damping_for(self, likelihood) -> float:
        if self.damping is not None:
            return self.damping
        return 1.0 if getattr(likelihood, "is_gaussian", False) else 0.5


@dataclass
class SweepStats:
    max_change: float = 0.0
    rejected: int = 0
    updated: int = 0


def init_state(system: LowRankSystem):
    """Flat start: gamma = 0, beta = 0, every site g=0, v=inf."""
    M, N = system.num_pseudo, system.num_data
    state = PosteriorState(np.zeros(M), np.zeros((M, M)), system)
    sites = [SiteFactor(g=0.0, v=np.inf, index=n) for n in range(N)]
    return state, sites


def _rank1_condition(state: PosteriorState, n: int, dtau: float, deta: float):
    """Multiply the posterior by exp(deta * w_n^T u - 0.5 * dtau * (w_n^T u)^2)
    in place-free form. dtau < 0 performs a deletion. Returns (gamma, beta).

    Requires 1 + dtau * Var[w_n^T u] > 0, otherwise the result is improper.
    """
    sys_ = state.system
    k = sys_.K_uf[:, n]
    w = sys_.W[:, n]
    p = w - state.beta @ k
    s = float(sys_.q_diag[n] - k @ state.beta @ k)
    denom = 1.0 + dtau * s
    if not denom > 0.0 or not np.isfinite(denom):
        raise CavityError(f"improper result while conditioning site {n}")
    m_w = float(k @ state.gamma)
    gamma = state.gamma + p * ((deta - dtau * m_w) / denom)
    beta = state.beta - np.outer(p, p) * (-dtau / denom)
    return gamma, beta


def delete(state: PosteriorState, site: SiteFactor, alpha: float) -> CavityState:
    """Remove an alpha-fraction of one site; for a flat site the cavity is
    the posterior itself. Raises CavityError if the cavity is improper."""
    n = site.index
    if site.is_flat:
        gamma, beta = state.gamma.copy(), state.beta.copy()
    else:
        gamma, beta = _rank1_condition(state, n, -alpha * site.tau, -alpha * site.eta)
    k = state.system.K_uf[:, n]
    m_f = float(k @ gamma)
    v_f = float(state.system.kff_diag[n] - k @ beta @ k)
    if not v_f > 0.0:
        raise CavityError(f"non-positive cavity variance {v_f} at datum {n}")
    return CavityState(gamma, beta, n, m_f, v_f, state.system)


def include(state_like, site: SiteFactor, alpha: float):
    """Inverse of delete: put an alpha-fraction of the site back."""
    st = PosteriorState(state_like.gamma, state_like.beta, state_like.system)
    gamma, beta = _rank1_condition(st, site.index, alpha * site.tau, alpha * site.eta)
    return PosteriorState(gamma, beta, state_like.system)


def project(cavity: CavityState, tm) -> PosteriorState:
    """Moment-matched posterior: gamma/beta move along K_uu^-1 V^cav_{u f_n}
    by d1 and d2 of the tilted log-normaliser."""
    if not (np.isfinite(tm.logZ) and np.isfinite(tm.d1) and np.isfinite(tm.d2)):
        raise SiteUpdateError(f"non-finite tilted moments at datum {cavity.index}")
    sys_ = cavity.system
    n = cavity.index
    k = sys_.K_uf[:, n]
    p = sys_.W[:, n] - cavity.beta @ k
    gamma = cavity.gamma + p * tm.d1
    beta = cavity.beta - np.outer(p, p) * tm.d2
    return PosteriorState(gamma, beta, sys_)


def proposed_site(cavity: CavityState, tm, alpha: float) -> SiteFactor:
    """Full site implied by one moment-matching step.

    The ratio of matched posterior to cavity is a Gaussian factor in w_n^T u
    with variance -1/d2 - Var_cav[w_n^T u]; the site is its 1/alpha power.
    """
    if not tm.d2 < 0.0:
        raise SiteUpdateError(
            f"non-concave tilted moments (d2={tm.d2}) at datum {cavity.index}"
        )
    s_w = cavity.proj_var
    v_ratio = -1.0 / tm.d2 - s_w
    if not (np.isfinite(v_ratio) and v_ratio > 0.0):
        raise SiteUpdateError(f"invalid site variance {v_ratio} at datum {cavity.index}")
    g_new = cavity.m_f - tm.d1 / tm.d2
    return SiteFactor(g=float(g_new), v=float(alpha * v_ratio), index=cavity.index)


def update_site(
    old: SiteFactor, proposed: SiteFactor, damping: float = 1.0
) -> SiteFactor:
    """Damped convex combination of old and proposed natural parameters.

    damping = 1 replaces the site; damping = alpha reproduces the fractional
    inclusion v^-1 <- v_ratio^-1 + (1-alpha) v_old^-1 of the powered scheme.
    """
    tau = (1.0 - damping) * old.tau + damping * proposed.tau
    eta = (1.0 - damping) * old.eta + damping * proposed.eta
    if not (np.isfinite(tau) and np.isfinite(eta)):
        raise SiteUpdateError(f"non-finite site parameters at datum {old.index}")
    if tau == 0.0 and eta != 0.0:
        raise SiteUpdateError(f"zero precision with non-zero mean at datum {old.index}")
    if tau == 0.0:
        return SiteFactor(g=0.0, v=np.inf, index=old.index)
    v = 1.0 / tau
    if v == 0.0:
        raise SiteUpdateError(f"zero site variance at datum {old.index}")
    return SiteFactor(g=eta / tau, v=v, index=old.index)


def _site_change(old: SiteFactor, new: SiteFactor) -> float:
    return max(abs(new.g - old.g), abs(new.tau - old.tau))


def _apply_site_change(
    cavity: CavityState, old: SiteFactor, new: SiteFactor, alpha: float
) -> PosteriorState:
    """Posterior = cavity * (new site) / (old site)^(1-alpha), keeping the
    state equal to prior * prod of sites."""
    dtau = new.tau - (1.0 - alpha) * old.tau
    deta = new.eta - (1.0 - alpha) * old.eta
    st = PosteriorState(cavity.gamma, cavity.beta, cavity.system)
    gamma, beta = _rank1_condition(st, cavity.index, dtau, deta)
    m, v = PosteriorState(gamma, beta, cavity.system).marginal(cavity.index)
    if not v > 0.0:
        raise SiteUpdateError(f"posterior variance {v} not positive at {cavity.index}")
    return PosteriorState(gamma, beta, cavity.system)


def refresh_state(system: LowRankSystem, sites) -> PosteriorState:
    """Rebuild (gamma, beta) exactly from the sites.

    With P = I + Psi T Psi^T: beta = L^-T (I - P^-1) L^-1 and
    gamma = L^-T P^-1 Psi (tau*g). Used after joint (parallel) updates and
    whenever the kernel matrices change under fixed sites.
    """
    tau = np.array([s.tau for s in sites])
    eta = np.array([s.eta for s in sites])
    M = system.num_pseudo
    Psi = system.Psi
    P = np.eye(M) + (Psi * tau[None, :]) @ Psi.T
    L_P, _ = chol_psd(P)
    Pinv = tri_solve(L_P, tri_solve(L_P, np.eye(M)), trans=True)
    Li = tri_solve(system.L_uu, np.eye(M))
    beta = Li.T @ (np.eye(M) - Pinv) @ Li
    gamma = Li.T @ (Pinv @ (Psi @ eta))
    return PosteriorState(gamma, (beta + beta.T) / 2.0, system)


def sweep(
    state: PosteriorState,
    sites,
    y: np.ndarray,
    likelihood,
    cfg: PEPConfig,
    order=None,
) -> SweepStats:
    """One pass of delete -> project -> update over the given site order
    (default: index order). Cavity and site failures are counted as
    rejections and never abort the pass. Mutates state and sites."""
    N = len(sites)
    alphas = cfg.site_alphas(state.system.num_data)
    damping = cfg.damping_for(likelihood)
    idx = range(N) if order is None else order
    stats = SweepStats()
    if cfg.parallel_updates:
        proposals = {}
        for n in idx:
            try:
                a = alphas[sites[n].index]
                cav = delete(state, sites[n], a)
                tm = likelihood.tilted(y[sites[n].index], cav.m_f, cav.v_f, a)
                proposals[n] = proposed_site(cav, tm, a)
            except (CavityError, SiteUpdateError):
                stats.rejected += 1
        for n, prop in proposals.items():
            try:
                new = update_site(sites[n], prop, damping)
            except SiteUpdateError:
                stats.rejected += 1
                continue
            stats.max_change = max(stats.max_change, _site_change(sites[n], new))
            sites[n] = new
            stats.updated += 1
        refreshed = refresh_state(state.system, sites)
        state.gamma, state.beta = refreshed.gamma, refreshed.beta
        return stats
    for n in idx:
        site = sites[n]
        a = alphas[site.index]
        try:
            cav = delete(state, site, a)
            tm = likelihood.tilted(y[site.index], cav.m_f, cav.v_f, a)
            prop = proposed_site(cav, tm, a)
            new = update_site(site, prop, damping)
            updated = _apply_site_change(cav, site, new, a)
        except (CavityError, SiteUpdateError):
            stats.rejected += 1
            continue
        stats.max_change = max(stats.max_change, _site_change(site, new))
        sites[n] = new
        state.gamma, state.beta = updated.gamma, updated.beta
        stats.updated += 1
    return stats


@dataclass
class RunDiagnostics:
    converged: bool
    sweeps: int
    rejected: int
    energy_trace: list = field(default_factory=list)


def run_pep(X, y, Z, hyper, likelihood, cfg: PEPConfig):
    """Iterate sweeps until the largest site change drops below cfg.tol or
    max_sweeps is hit; returns (state, sites, energy, diagnostics)."""
    system = build_system(X, Z, hyper)
    state, sites = init_state(system)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != system.num_data:
        raise ValueError("y length does not match X")
    diag = RunDiagnostics(converged=system.num_data == 0, sweeps=0, rejected=0)
    for _ in range(cfg.max_sweeps):
        if system.num_data == 0:
            break
        stats = sweep(state, sites, y, likelihood, cfg)
        diag.sweeps += 1
        diag.rejected += stats.rejected
        diag.energy_trace.append(pep_energy(state, sites, y, likelihood, cfg))
        if stats.max_change < cfg.tol:
            diag.converged = True
            break
    energy = pep_energy(state, sites, y, likelihood, cfg)
    return state, sites, energy, diag


def predict(state: PosteriorState, Xstar, hyper, Z, likelihood=None):
    """Latent mean/variance at new inputs; with a non-Gaussian likelihood the
    class probability is returned as a third output."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    K_su = gram(Xstar, Z, hyper)
    mean = K_su @ state.gamma
    var = gram_diag(Xstar, hyper) - np.sum((K_su @ state.beta) * K_su, axis=1)
    var = np.maximum(var, 0.0)
    if likelihood is not None and not getattr(likelihood, "is_gaussian", True):
        return mean, var, likelihood.predict(mean, var)
    return mean, var


def _posterior_scalars(state: PosteriorState):
    """Per-site s_n = Var[w_n^T u] and mu_n = E[w_n^T u], plus the global
    log|V/K_uu| and m^T V^-1 m needed by the energy."""
    sys_ = state.system
    Bt = sys_.L_uu.T @ state.beta @ sys_.L_uu
    M = sys_.num_pseudo
    ImB = np.eye(M) - (Bt + Bt.T) / 2.0
    L_I, _ = chol_psd(ImB)
    logdet_ratio = logdet_from_chol(L_I)
    t = tri_solve(L_I, sys_.L_uu.T @ state.gamma)
    quad = float(t @ t)
    KB = sys_.K_uf.T @ state.beta
    s_all = sys_.q_diag - np.sum(KB.T * sys_.K_uf, axis=0)
    mu_all = sys_.K_uf.T @ state.gamma
    return s_all, mu_all, logdet_ratio, quad


def site_cavity_scalars(s_n: float, mu_n: float, site: SiteFactor, alpha: float):
    """Cavity mean/variance of w_n^T u after removing an alpha-fraction."""
    c = alpha * site.tau
    e = 1.0 - c * s_n
    if not e > 0.0:
        raise StateError(f"improper cavity at datum {site.index} in energy")
    m_cav = (mu_n - alpha * site.eta * s_n) / e
    s_cav = s_n / e
    return m_cav, s_cav, c, e


def pep_energy(state: PosteriorState, sites, y, likelihood, cfg: PEPConfig) -> float:
    """Approximate log-marginal likelihood
    G(q) - G(p) + sum_n (1/alpha_n) [logZ~_n + G(q\\n) - G(q)],
    with every cavity recomputed from the current state and sites."""
    sys_ = state.system
    N = sys_.num_data
    alphas = cfg.site_alphas(N)
    s_all, mu_all, logdet_ratio, quad = _posterior_scalars(state)
    energy = 0.5 * logdet_ratio + 0.5 * quad
    y = np.asarray(y, dtype=float).ravel()
    for site in sites:
        n = site.index
        a = alphas[n]
        s_n, mu_n = float(s_all[n]), float(mu_all[n])
        m_cav, s_cav, c, e = site_cavity_scalars(s_n, mu_n, site, a)
        v_cav = float(sys_.diag_D[n]) + s_cav
        if not v_cav > 0.0:
            raise StateError(f"non-positive cavity variance at datum {n} in energy")
        try:
            tm = likelihood.tilted(y[n], m_cav, v_cav, a)
        except CavityError as exc:
            raise StateError(str(exc)) from exc
        ce = a * site.eta  # coefficient alpha * tau_n * g_n
        delta_g = -0.5 * np.log(e) + 0.5 * (
            -2.0 * ce * mu_n + ce**2 * s_n + (c / e) * (mu_n - ce * s_n) ** 2
        )
        energy += (tm.logZ + delta_g) / a
    return float(energy)
