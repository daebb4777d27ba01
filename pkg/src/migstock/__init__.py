"""Nowcasting migrant stocks by fusing a long survey panel with recent, biased
social-media measurements."""
from .biasadjust import BiasAdjuster, BiasCoefficients, adjust_wave, fit_bias_model
from .components import AgeComponents, PrincipalComponents, build_log_matrix, compute_components, impute_missing
from .estimator import MigrantStockNowcaster
from .forecast import project, project_draws
from .ingest import MigrantPanel, align, log_scale_variance, parse_panel, sampling_variance_social, write_panel
from .model import ModelConfig, build_inputs, gelman_rubin, run_mcmc, summarize
from .simulate import SimulationDims, generate, simulate
from .validate import ValidationReport, rmse, run_validation

__version__ = "0.1.0"

__all__ = [
    "AgeComponents",
    "BiasAdjuster",
    "BiasCoefficients",
    "MigrantPanel",
    "MigrantStockNowcaster",
    "ModelConfig",
    "PrincipalComponents",
    "SimulationDims",
    "ValidationReport",
    "adjust_wave",
    "align",
    "build_inputs",
    "build_log_matrix",
    "compute_components",
    "fit_bias_model",
    "gelman_rubin",
    "generate",
    "impute_missing",
    "log_scale_variance",
    "parse_panel",
    "project",
    "project_draws",
    "rmse",
    "run_mcmc",
    "run_validation",
    "sampling_variance_social",
    "simulate",
    "summarize",
    "write_panel",
]
