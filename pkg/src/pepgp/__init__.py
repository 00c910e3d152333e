"""Sparse GP regression and classification with power expectation propagation.

The power parameter alpha interpolates between the variational free-energy
treatment (alpha -> 0) and expectation propagation (alpha = 1); the FITC and
PITC posteriors fall out as the alpha = 1 special cases.
"""

from .kernels import KernelHyper, PseudoInputs, gram, gram_diag, gram_grads, se_ard
from .likelihoods import (
    GaussianLikelihood,
    ProbitLikelihood,
    TiltedMoments,
    gaussian_tilted,
    probit_tilted_analytic,
    probit_tilted_quad,
)
from .linalg import LowRankSystem, build_system, chol_psd, low_rank_solve_logdet
from .power_ep import (
    CavityState,
    PEPConfig,
    PosteriorState,
    SiteFactor,
    delete,
    include,
    init_state,
    pep_energy,
    predict,
    project,
    proposed_site,
    refresh_state,
    run_pep,
    sweep,
    update_site,
)
from .regression import (
    BlockPartition,
    SurrogateModel,
    collapsed_posterior,
    contiguous_partition,
    exact_gp_logml,
    exact_gp_predict,
    pep_regression_energy,
    singleton_partition,
    surrogate_recover,
    vfe_energy,
)

__all__ = [
    "KernelHyper",
    "PseudoInputs",
    "se_ard",
    "gram",
    "gram_diag",
    "gram_grads",
    "LowRankSystem",
    "build_system",
    "chol_psd",
    "low_rank_solve_logdet",
    "TiltedMoments",
    "GaussianLikelihood",
    "ProbitLikelihood",
    "gaussian_tilted",
    "probit_tilted_quad",
    "probit_tilted_analytic",
    "SiteFactor",
    "PosteriorState",
    "CavityState",
    "PEPConfig",
    "init_state",
    "delete",
    "include",
    "project",
    "proposed_site",
    "update_site",
    "sweep",
    "run_pep",
    "predict",
    "pep_energy",
    "refresh_state",
    "BlockPartition",
    "singleton_partition",
    "contiguous_partition",
    "collapsed_posterior",
    "pep_regression_energy",
    "vfe_energy",
    "exact_gp_logml",
    "exact_gp_predict",
    "SurrogateModel",
    "surrogate_recover",
]

__version__ = "0.1.0"
