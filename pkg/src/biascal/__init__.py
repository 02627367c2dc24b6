"""Calibration of observational effect estimates with negative and positive controls.

Frequentist empirical calibration (empirical null p-values and systematic
error confidence intervals), Bayesian posterior-interval calibration under
constant and linear bias models, positive-control synthesis, and a coverage
evaluation harness.
"""

from .controls import (
    ControlRecord,
    ControlSet,
    SplitPlan,
    filter_negative_only,
    load_controls,
    rotate_families,
    split_by_family,
    write_controls,
)
from .empirical_null import NullDistribution, calibrated_p, fit_null
from .errors import (
    BiasCalError,
    ConvergenceError,
    ConvergenceWarning,
    IdentifiabilityError,
    ModelFailure,
    NumericalError,
    ValidationError,
)
from .evaluation import CoverageReport, coverage, emit_figures, rmse, run_protocol
from .provenance import __version__
from .systematic_error import (
    CalibratedInterval,
    SystematicErrorModel,
    calibrated_ci,
    fit_systematic,
    wald_interval,
)

__all__ = [
    "BiasCalError",
    "CalibratedInterval",
    "ControlRecord",
    "ControlSet",
    "ConvergenceError",
    "ConvergenceWarning",
    "CoverageReport",
    "IdentifiabilityError",
    "ModelFailure",
    "NullDistribution",
    "NumericalError",
    "SplitPlan",
    "SystematicErrorModel",
    "ValidationError",
    "__version__",
    "calibrated_ci",
    "calibrated_p",
    "coverage",
    "emit_figures",
    "filter_negative_only",
    "fit_null",
    "fit_systematic",
    "load_controls",
    "rmse",
    "rotate_families",
    "run_protocol",
    "split_by_family",
    "wald_interval",
    "write_controls",
]
