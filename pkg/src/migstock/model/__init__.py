from .config import ModelConfig
from .density import log_posterior
from .diagnostics import gelman_rubin, split_rhat, summarize
from .inputs import ModelInputs, build_inputs
from .io import read_samples, write_samples
from .sampler import GibbsSampler, PosteriorSamples, run_mcmc
from .state import ParameterState

__all__ = [
    "GibbsSampler",
    "ModelConfig",
    "ModelInputs",
    "ParameterState",
    "PosteriorSamples",
    "build_inputs",
    "gelman_rubin",
    "log_posterior",
    "read_samples",
    "run_mcmc",
    "split_rhat",
    "summarize",
    "write_samples",
]
