"""Joint log density of the hierarchical model.

Standard deviations carry half-Normal priors, so the density is with respect
to ``(sigma_beta1, sigma_beta, sigma_phi, sigma_eps, sigma_ns)``; the state
stores the corresponding variances.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import NonFiniteDensity
from .config import ModelConfig
from .inputs import ModelInputs
from .state import ParameterState

LOG_2PI = np.log(2 * np.pi)


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def half_normal_logpdf(sd, scale):
    return np.log(2.0) + normal_logpdf(sd, 0.0, scale**2)


def initial_variance_factor(rho, cap):
    """Stationary AR(1) variance multiplier ``1 / (1 - rho^2)``, capped at ``cap``."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore"):
        factor = 1.0 / (1.0 - rho**2)
    return np.where((rho**2 < 1) & (factor < cap), factor, cap)


def observation_loglik(state: ParameterState, inputs: ModelInputs) -> float:
    log_mu = state.log_mu(inputs.z1, inputs.z2)
    total = 0.0
    if len(inputs.survey_y):
        x, t, s = inputs.survey_cell.T
        total += normal_logpdf(inputs.survey_y, log_mu[x, t, s], inputs.survey_var).sum()
    if len(inputs.social_y):
        x, t, s = inputs.social_cell.T
        total += normal_logpdf(inputs.social_y, log_mu[x, t, s], inputs.social_var + state.sigma2_ns).sum()
    return float(total)


def process_logpdf(state: ParameterState, config: ModelConfig) -> float:
    c = config.prior_scale_coeff
    b1, b2, phi, eps = state.beta1, state.beta2, state.phi, state.eps
    total = normal_logpdf(b1[0], 0.0, c).sum()
    total += normal_logpdf(b1[1:], b1[:-1], state.sigma2_beta1).sum()
    total += normal_logpdf(b2, phi[:, None], state.sigma2_beta).sum()
    total += normal_logpdf(phi[0], 0.0, c)
    total += normal_logpdf(phi[1:], phi[:-1], state.sigma2_phi).sum()
    v0 = state.sigma2_eps * initial_variance_factor(state.rho, config.init_variance_cap)
    total += normal_logpdf(eps[:, 0, :], 0.0, v0).sum()
    total += normal_logpdf(eps[:, 1:, :], state.rho[:, None, :] * eps[:, :-1, :], state.sigma2_eps).sum()
    return float(total)


def prior_logpdf(state: ParameterState, config: ModelConfig) -> float:
    if np.any(state.rho < 0) or np.any(state.rho > 1):
        return -np.inf
    scale = config.prior_scale_sd
    return float(sum(half_normal_logpdf(np.sqrt(v), scale) for v in
                     (state.sigma2_beta1, state.sigma2_beta, state.sigma2_phi, state.sigma2_eps, state.sigma2_ns)))


def log_posterior(state: ParameterState, inputs: ModelInputs, config: ModelConfig | None = None) -> float:
    """Unnormalised log posterior: data terms + latent processes + priors."""
    config = config or ModelConfig()
    with np.errstate(all="ignore"):
        value = observation_loglik(state, inputs) + process_logpdf(state, config) + prior_logpdf(state, config)
    if not np.isfinite(value):
        raise NonFiniteDensity("log posterior is not finite; check the state invariants")
    return value
