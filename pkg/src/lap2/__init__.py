"""Privacy accounting for DP-SGD with Laplace noise under l2 gradient clipping."""

from lap2.accountant import (MechanismConfig, MomentProfile, alpha_multivariate, alpha_univariate,
                             alpha_univariate_profile, majorization_set, moment_term_F,
                             multivariate_profile)
from lap2.budget import (AccountReport, PrivacyPoint, account, compose, delta_for_epsilon, delta_of,
                         epsilon_for_delta, epsilon_of, invert_noise_for_epsilon, wall_diagnostics)
from lap2.errors import DomainError, InfeasibleError, InvariantError, QuadratureError
from lap2.gaussian import GaussianVariant, alpha_gaussian, gaussian_profile
from lap2.optimizer import (OptimizerResult, SearchSpec, b_star_init, optimize_parameters, rho_star,
                            snr_kappa)

__version__ = "0.1.0"

__all__ = [
    "AccountReport", "DomainError", "GaussianVariant", "InfeasibleError", "InvariantError",
    "MechanismConfig", "MomentProfile", "OptimizerResult", "PrivacyPoint", "QuadratureError",
    "SearchSpec", "account", "alpha_gaussian", "alpha_multivariate", "alpha_univariate",
    "alpha_univariate_profile", "b_star_init", "compose", "delta_for_epsilon", "delta_of",
    "epsilon_for_delta", "epsilon_of", "gaussian_profile", "invert_noise_for_epsilon",
    "majorization_set", "moment_term_F", "multivariate_profile", "optimize_parameters", "rho_star",
    "snr_kappa", "wall_diagnostics",
]
