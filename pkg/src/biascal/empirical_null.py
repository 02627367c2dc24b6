"""Empirical null distribution fitted to negative controls, and calibrated p-values."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .controls import ControlSet
from .errors import ConvergenceError, ValidationError

MAX_ITER = 1000
_LOG_SIGMA2_FLOOR = -40.0


@dataclass(frozen=True)
class NullDistribution:
    """Normal bias distribution with mean ``nu`` and variance ``sigma2``."""

    nu: float
    sigma2: float
    n_controls: int = 0
    log_likelihood: float = float("nan")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def null_log_likelihood(nu, sigma2, bias, se):
    """Marginal log-likelihood of estimated biases under ``N(nu, sigma2)``.

    Each estimated bias is ``N(nu, sigma2 + se**2)`` once the true bias is
    integrated out.
    """
    bias = np.asarray(bias, dtype=float)
    var = sigma2 + np.asarray(se, dtype=float) ** 2
    return float(-0.5 * np.sum(np.log(2 * np.pi * var) + (bias - nu) ** 2 / var))


def _negloglik_and_grad(params, bias, se2):
    nu, log_s2 = params
    s2 = math.exp(log_s2)
    var = s2 + se2
    r = bias - nu
    nll = 0.5 * np.sum(np.log(2 * np.pi * var) + r**2 / var)
    d_nu = -np.sum(r / var)
    d_s2 = 0.5 * np.sum(1.0 / var - r**2 / var**2)
    return nll, np.array([d_nu, d_s2 * s2])


def fit_null_arrays(bias, se) -> NullDistribution:
    """Maximum marginal likelihood fit of ``(nu, sigma2)`` from raw arrays."""
    bias = np.asarray(bias, dtype=float)
    se = np.asarray(se, dtype=float)
    n = bias.size
    if n < 2:
        raise ValidationError(f"need at least 2 negative controls, got {n}")
    if not (np.all(np.isfinite(bias)) and np.all(np.isfinite(se)) and np.all(se > 0)):
        raise ValidationError("estimates must be finite with positive standard errors")
    se2 = se**2

    # Boundary candidate: sigma2 = 0, nu at the precision-weighted mean.
    w = 1.0 / se2
    nu0 = float(np.sum(w * bias) / np.sum(w))
    best = (nu0, 0.0, null_log_likelihood(nu0, 0.0, bias, se))

    mom_var = max(float(np.var(bias, ddof=1) - np.mean(se2)), 1e-4)
    pooled = max(float(np.var(bias, ddof=1)), 1e-4)
    starts = [(float(np.mean(bias)), math.log(mom_var)), (0.0, math.log(pooled))]

    failures = []
    for start in starts:
        res = optimize.minimize(
            _negloglik_and_grad,
            np.array(start),
            args=(bias, se2),
            jac=True,
            method="L-BFGS-B",
            bounds=[(None, None), (_LOG_SIGMA2_FLOOR, 20.0)],
            options={"maxiter": MAX_ITER, "gtol": 1e-10, "ftol": 1e-14},
        )
        if not res.success:
            failures.append(res.message)
            continue
        nu, log_s2 = res.x
        s2 = math.exp(log_s2)
        ll = null_log_likelihood(nu, s2, bias, se)
        if ll > best[2]:
            best = (float(nu), s2, ll)

    # A positive slope in sigma2 at the boundary means the optimum is interior,
    # so the boundary candidate alone is not an answer.
    if len(failures) == len(starts) and _boundary_slope(nu0, bias, se2) > 0:
        raise ConvergenceError(f"empirical null fit did not converge: {failures}")

    nu, s2, _ = best
    if s2 < 1e-12:
        nu, s2 = nu0, 0.0
    return NullDistribution(
        nu=float(nu),
        sigma2=float(s2),
        n_controls=n,
        log_likelihood=null_log_likelihood(nu, s2, bias, se),
    )


def _boundary_slope(nu0, bias, se2) -> float:
    r = bias - nu0
    return float(0.5 * np.sum(r**2 / se2**2 - 1.0 / se2))


def fit_null(negatives: ControlSet) -> NullDistribution:
    """Fit the empirical null distribution to a set of negative controls."""
    bad = [i for i, r in enumerate(negatives) if not r.is_negative]
    if bad:
        raise ValidationError(
            f"fit_null requires negative controls only; records {bad[:5]} are not"
        )
    return fit_null_arrays(negatives.log_estimates, negatives.standard_errors)


def calibrated_p(
    null: NullDistribution,
    log_estimate: float,
    se: float,
    alternative: str = "two-sided",
) -> float:
    """P-value of ``log_estimate`` against the empirical null.

    ``alternative`` is ``"two-sided"`` (default), ``"greater"`` (effect above
    the null) or ``"less"``.
    """
    if not (se > 0 and math.isfinite(se)):
        raise ValidationError(f"se must be finite and > 0, got {se}")
    z = (log_estimate - null.nu) / math.sqrt(null.sigma2 + se**2)
    if alternative == "two-sided":
        return float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    if alternative == "greater":
        return float(stats.norm.sf(z))
    if alternative == "less":
        return float(stats.norm.cdf(z))
    raise ValidationError(f"unknown alternative {alternative!r}")
