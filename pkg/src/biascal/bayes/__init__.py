"""Bayesian bias models: samplers, posterior calibration and diagnostics."""

from .calibrate import calibrate_posterior, theta0_draws
from .diagnostics import (
    DiagnosticReport,
    autocorrelation,
    diagnose,
    effective_sample_size,
    mc_standard_error,
    potential_scale_reduction,
    write_diagnostics,
)
from .models import CONSTANT, LINEAR, McmcConfig, PosteriorSamples, Priors
from .sampler import (
    fit_constant,
    fit_constant_arrays,
    fit_constant_explicit_arrays,
    fit_linear,
    fit_linear_arrays,
)
from .io import read_draws, write_draws

__all__ = [
    "CONSTANT",
    "LINEAR",
    "DiagnosticReport",
    "McmcConfig",
    "PosteriorSamples",
    "Priors",
    "autocorrelation",
    "calibrate_posterior",
    "diagnose",
    "effective_sample_size",
    "fit_constant",
    "fit_constant_arrays",
    "fit_constant_explicit_arrays",
    "fit_linear",
    "fit_linear_arrays",
    "mc_standard_error",
    "potential_scale_reduction",
    "read_draws",
    "theta0_draws",
    "write_diagnostics",
    "write_draws",
]
