"""Posterior intervals for the log true effect of an outcome of interest."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import ValidationError
from ..systematic_error import CalibratedInterval
from .models import CONSTANT, LINEAR, PosteriorSamples

# Independence-Metropolis sweeps per posterior draw in the linear model.
THETA0_STEPS = 25


def stratified_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` standard normals, one per equal-probability stratum, in random order.

    Each value is marginally N(0, 1); the set as a whole has far smaller
    quantile error than ``n`` independent draws.
    """
    u = np.clip((rng.permutation(n) + rng.random(n)) / n, 1e-16, 1.0 - 1e-16)
    return math.sqrt(2.0) * special.erfinv(2.0 * u - 1.0)


def _check(se, level):
    if not (se > 0 and math.isfinite(se)):
        raise ValidationError(f"se must be finite and > 0, got {se}")
    if not 0.0 < level < 1.0:
        raise ValidationError(f"level must lie in (0, 1), got {level}")


def theta0_draws_constant(samples, log_estimate, se, rng) -> np.ndarray:
    mu = samples.flat("mu")
    sigma = np.sqrt(samples.flat("sigma2"))
    n = mu.size
    beta0 = mu + sigma * stratified_normal(rng, n)
    return log_estimate - beta0 + se * stratified_normal(rng, n)


def _theta0_logpost(t, est, mu, slope_mean, sigma2, slope_var, se2, prior_var):
    var = sigma2 + slope_var * np.abs(t) + se2
    ok = var > 0
    safe = np.where(ok, var, 1.0)
    r = est - t - mu - slope_mean * t
    lp = -0.5 * (np.log(safe) + r * r / safe) - 0.5 * t * t / prior_var
    return np.where(ok, lp, -np.inf)


def theta0_draws_linear(samples, log_estimate, se, rng) -> np.ndarray:
    """One draw of the latent log true effect per retained parameter draw.

    For each parameter draw the conditional of ``theta0`` is one-dimensional
    but non-Gaussian (its bias variance depends on ``|theta0|``). All draws
    are advanced in parallel by independence-Metropolis steps whose proposal
    is the Gaussian approximation around the bias-corrected estimate.
    """
    mu = samples.flat("mu")
    slope_mean = samples.flat("slope_mean")
    sigma2 = samples.flat("sigma2")
    slope_var = samples.flat("slope_var")
    prior_var = samples.priors.theta0_var
    se2 = se * se
    n = mu.size

    gain = 1.0 + slope_mean
    gain = np.where(np.abs(gain) < 1e-3, np.copysign(1e-3, gain), gain)
    centre = (log_estimate - mu) / gain
    var_c = np.maximum(sigma2 + slope_var * np.abs(centre) + se2, se2)
    scale = 1.5 * np.sqrt(var_c) / np.abs(gain)

    def logp(t):
        return _theta0_logpost(t, log_estimate, mu, slope_mean, sigma2, slope_var, se2, prior_var)

    def logq(t):
        z = (t - centre) / scale
        return -0.5 * z * z - np.log(scale)

    cur = centre + scale * rng.standard_normal(n)
    lp_cur = logp(cur)
    lq_cur = logq(cur)
    for _ in range(THETA0_STEPS):
        prop = centre + scale * rng.standard_normal(n)
        lp_prop = logp(prop)
        lq_prop = logq(prop)
        with np.errstate(invalid="ignore"):
            log_ratio = (lp_prop - lq_prop) - (lp_cur - lq_cur)
        log_ratio = np.where(np.isneginf(lp_cur) & np.isfinite(lp_prop), np.inf, log_ratio)
        accept = np.log(rng.random(n)) < log_ratio
        cur = np.where(accept, prop, cur)
        lp_cur = np.where(accept, lp_prop, lp_cur)
        lq_cur = np.where(accept, lq_prop, lq_cur)
    return cur


def theta0_draws(samples: PosteriorSamples, log_estimate: float, se: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    if samples.model == CONSTANT:
        return theta0_draws_constant(samples, log_estimate, se, rng)
    if samples.model == LINEAR:
        return theta0_draws_linear(samples, log_estimate, se, rng)
    raise ValidationError(f"unknown model {samples.model!r}")


def calibrate_posterior(
    samples: PosteriorSamples,
    log_estimate: float,
    se: float,
    level: float = 0.95,
    seed: int | None = None,
) -> CalibratedInterval:
    """Equal-tailed posterior interval for the log true effect size.

    ``seed`` drives the predictive draws of the bias and sampling noise; it
    defaults to the seed the posterior was sampled with.
    """
    _check(se, level)
    if seed is None:
        seed = samples.config.seed
    draws = theta0_draws(samples, log_estimate, se, seed)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha])
    return CalibratedInterval(
        lower=float(lo),
        upper=float(hi),
        level=level,
        method="calibrated",
        model=samples.model,
        seed=seed,
        extra={"posterior_median": float(np.median(draws))},
    )
