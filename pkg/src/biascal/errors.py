"""Exception hierarchy shared by the library and the CLI.

The CLI maps each class onto a process exit status, so library code should
raise the most specific class that applies.
"""


class BiasCalError(Exception):
    """Base class for all errors raised by :mod:`biascal`."""

    exit_code = 1


class ValidationError(BiasCalError, ValueError):
    """Input data violates a documented invariant or precondition."""

    exit_code = 3


class IdentifiabilityError(ValidationError):
    """The supplied controls cannot identify the requested model."""


class NumericalError(BiasCalError, RuntimeError):
    """An optimizer, root finder or sampler failed to produce a result."""

    exit_code = 4


class ConvergenceError(NumericalError):
    """Iterative procedure hit its iteration cap without converging."""


class ModelFailure(NumericalError):
    """A fitted model cannot be used at the requested point (e.g. extrapolation)."""


class ConvergenceWarning(UserWarning):
    """MCMC diagnostics indicate chains have not mixed."""
