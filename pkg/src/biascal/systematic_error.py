"""Effect-size dependent systematic error model and calibrated confidence intervals.

The bias of a control with log true effect ``theta`` is modelled as
``N(a + b*theta, c + d*|theta|)``. Parameters are fitted by maximum marginal
likelihood on negative and positive controls; calibrated intervals are found
by inverting the implied sampling distribution of the estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .controls import ControlSet
from .errors import ConvergenceError, IdentifiabilityError, ModelFailure, ValidationError

MAX_ITER = 2000
ROOT_XTOL = 1e-8
_LOG_FLOOR = -40.0


@dataclass(frozen=True)
class SystematicErrorModel:
    a: float
    b: float
    c: float
    d: float
    n_controls: int = 0
    log_likelihood: float = float("nan")
    # |theta| range the model was fitted on; outside it variance positivity
    # is not guaranteed.
    abs_theta_range: tuple[float, float] = (0.0, math.inf)

    def bias_mean(self, theta):
        return self.a + self.b * np.asarray(theta, dtype=float)

    def bias_variance(self, theta):
        return self.c + self.d * np.abs(np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class CalibratedInterval:
    """Interval on the log scale plus provenance of how it was computed."""

    lower: float
    upper: float
    level: float
    method: str
    model: str = ""
    seed: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def systematic_log_likelihood(params, log_estimate, se, theta) -> float:
    a, b, c, d = params
    var = c + d * np.abs(theta) + np.asarray(se) ** 2
    if np.any(var <= 0):
        return -math.inf
    r = np.asarray(log_estimate) - theta - a - b * theta
    return float(-0.5 * np.sum(np.log(2 * np.pi * var) + r**2 / var))


def _unpack(x, tmax):
    # Variance is linear in |theta|, so positivity at both ends of the fitted
    # window implies positivity everywhere inside it.
    a, b, g0, g1 = x
    c = math.exp(g0)
    d = (math.exp(g1) - c) / tmax
    return a, b, c, d


def fit_systematic_arrays(log_estimate, se, theta) -> SystematicErrorModel:
    est = np.asarray(log_estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = est.size
    if n < 2:
        raise ValidationError(f"need at least 2 controls, got {n}")
    levels = np.unique(np.round(theta, 12))
    if levels.size < 2:
        raise IdentifiabilityError(
            "systematic error model needs at least two distinct true effect sizes"
        )
    tmax = float(np.max(np.abs(theta)))
    abs_t = np.abs(theta)
    se2 = se**2
    bias = est - theta

    def nll(x):
        a, b, c, d = _unpack(x, tmax)
        var = c + d * abs_t + se2
        r = bias - a - b * theta
        val = 0.5 * np.sum(np.log(2 * np.pi * var) + r**2 / var)
        # Gradient via chain rule through the (g0, g1) parameterization.
        dv = 0.5 * (1.0 / var - r**2 / var**2)
        g_a = -np.sum(r / var)
        g_b = -np.sum(r * theta / var)
        e0, e1 = math.exp(x[2]), math.exp(x[3])
        g_g0 = np.sum(dv * (1.0 - abs_t / tmax)) * e0
        g_g1 = np.sum(dv * (abs_t / tmax)) * e1
        return val, np.array([g_a, g_b, g_g0, g_g1])

    slope, intercept = np.polyfit(theta, bias, 1)
    resid_var = max(float(np.var(bias - intercept - slope * theta) - np.mean(se2)), 1e-4)
    starts = [
        (intercept, slope, math.log(resid_var), math.log(resid_var)),
        (0.0, 0.0, math.log(1e-2), math.log(1e-2)),
        (float(np.mean(bias)), 0.0, math.log(np.var(bias) + 1e-4), math.log(1e-3)),
    ]
    best = None
    messages = []
    bounds = [(None, None), (None, None), (_LOG_FLOOR, 10.0), (_LOG_FLOOR, 10.0)]
    for start in starts:
        res = optimize.minimize(
            nll,
            np.array(start, dtype=float),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": MAX_ITER, "gtol": 1e-10, "ftol": 1e-15},
        )
        if not res.success:
            messages.append(str(res.message))
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise ConvergenceError(f"systematic error fit did not converge: {messages}")

    a, b, c, d = _unpack(best.x, tmax)
    if c < 1e-14:
        c = 0.0
    if abs(d) < 1e-14:
        d = 0.0
    if np.any(c + d * abs_t + se2 <= 0):
        raise ModelFailure("fitted variance is non-positive at a fitted control")
    ll = systematic_log_likelihood((a, b, c, d), est, se, theta)
    return SystematicErrorModel(
        a=float(a),
        b=float(b),
        c=float(c),
        d=float(d),
        n_controls=n,
        log_likelihood=ll,
        abs_theta_range=(float(abs_t.min()), tmax),
    )


def fit_systematic(controls: ControlSet) -> SystematicErrorModel:
    """Fit ``(a, b, c, d)`` on labelled negative and positive controls."""
    controls.require_labelled("fit_systematic")
    return fit_systematic_arrays(
        controls.log_estimates, controls.standard_errors, controls.log_true_effects
    )


def _standardized(model: SystematicErrorModel, log_estimate, se2, theta0):
    var = model.c + model.d * abs(theta0) + se2
    if var <= 0:
        raise ModelFailure(
            f"model variance is non-positive at theta0={theta0:.4g} (extrapolation)"
        )
    return (log_estimate - theta0 - model.a - model.b * theta0) / math.sqrt(var)


def _solve_endpoint(model, log_estimate, se2, z, half_width, side):
    """Root of the standardized residual = ``z`` on one side of the centre.

    The centre is the bias-corrected estimate, where the residual is 0, so
    the bracket ``[centre, centre + side * hw]`` has a sign change once
    ``hw`` is wide enough. Ends that fall where the model variance is
    non-positive are pulled back toward the centre.
    """
    centre = (log_estimate - model.a) / (1.0 + model.b)
    f = lambda t: _standardized(model, log_estimate, se2, t) - z
    f_centre = f(centre)
    for widen in range(3):
        hw = half_width * 2**widen
        end = centre + side * hw
        for _ in range(60):
            if model.c + model.d * abs(end) + se2 > 0:
                break
            end = centre + (end - centre) / 2.0
        f_end = f(end)
        if f_end * f_centre <= 0:
            lo, hi = sorted((centre, end))
            return optimize.bisect(f, lo, hi, xtol=ROOT_XTOL, maxiter=500)
    raise ModelFailure(
        "no sign change in calibrated CI equation within bracket "
        f"+/-{half_width * 4:.3g} of the bias-corrected estimate"
    )


def calibrated_ci(
    model: SystematicErrorModel,
    log_estimate: float,
    se: float,
    level: float = 0.95,
) -> CalibratedInterval:
    """Equal-tailed calibrated confidence interval on the log scale."""
    if not (se > 0 and math.isfinite(se)):
        raise ValidationError(f"se must be finite and > 0, got {se}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    if 1.0 + model.b <= 0:
        raise ModelFailure(
            f"1 + b = {1 + model.b:.4g} <= 0: calibrated CI equation is not monotone"
        )
    se2 = se * se
    z = stats.norm.ppf(0.5 + level / 2.0)
    half_width = 10.0 * math.sqrt(se2 + model.c + abs(model.d) * 10.0)
    # Larger theta0 lowers the standardized residual, so the lower bound
    # solves for +z and the upper bound for -z.
    lower = _solve_endpoint(model, log_estimate, se2, z, half_width, -1.0)
    upper = _solve_endpoint(model, log_estimate, se2, -z, half_width, 1.0)
    return CalibratedInterval(
        lower=float(lower),
        upper=float(upper),
        level=level,
        method="calibrated",
        model="frequentist",
    )


def wald_interval(log_estimate: float, se: float, level: float = 0.95) -> CalibratedInterval:
    z = stats.norm.ppf(0.5 + level / 2.0)
    return CalibratedInterval(
        lower=log_estimate - z * se,
        upper=log_estimate + z * se,
        level=level,
        method="uncalibrated",
        model="wald",
    )
