"""Gibbs samplers for the constant and linear bias models.

Both samplers work with the likelihood in which each control's true bias is
integrated out, so the estimated bias of control ``i`` is Normal with the
model's bias mean and variance ``bias_var + se_i**2``. Location parameters
get exact conjugate updates; variance parameters are updated by slice
sampling (``sigma2`` on the log-precision scale, so the Uniform precision
prior becomes a bounded support plus a Jacobian term).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import stats

from ..controls import ControlSet
from ..errors import ConvergenceWarning, IdentifiabilityError, ValidationError
from .diagnostics import RHAT_THRESHOLD, diagnose
from .models import CONSTANT, LINEAR, McmcConfig, PosteriorSamples, Priors
from .slice import WidthAdapter, slice_sample


def _check_inputs(bias, se, theta=None):
    bias = np.asarray(bias, dtype=float)
    se = np.asarray(se, dtype=float)
    if bias.size == 0:
        raise ValidationError("training set is empty")
    if bias.size < 2:
        raise ValidationError("need at least 2 training controls; sigma2 is unidentifiable")
    if bias.shape != se.shape:
        raise ValidationError("bias and se must have the same shape")
    if not np.any(np.isfinite(se)):
        raise ValidationError("all standard errors are non-finite")
    if not (np.all(np.isfinite(bias)) and np.all(np.isfinite(se)) and np.all(se > 0)):
        raise ValidationError("estimated biases must be finite with positive standard errors")
    if theta is not None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != bias.shape:
            raise ValidationError("theta must have the same shape as bias")
    return bias, se, theta


def _normal_loglik(resid, var):
    return -0.5 * float(np.sum(np.log(var) + resid * resid / var))


def _init_sigma2(rng, cfg: McmcConfig, priors: Priors) -> float:
    s2 = (cfg.init_sd * rng.standard_normal()) ** 2
    lo = priors.sigma2_min
    return min(max(s2, lo * 1.05), 1e3)


# -- constant model ----------------------------------------------------------


def _run_constant_chain(chain, bias, se2, cfg, priors, fixed_sigma2):
    rng = cfg.chain_rng(chain)
    mu = priors.mu_mean + cfg.init_sd * rng.standard_normal()
    sigma2 = fixed_sigma2 if fixed_sigma2 is not None else _init_sigma2(rng, cfg, priors)
    log_upper = math.log(priors.precision_upper)
    adapter = WidthAdapter(1.0)

    def log_post_logprec(u):
        if u >= log_upper:
            return -math.inf
        var = math.exp(-u) + se2
        # Uniform prior on precision p = e^u contributes the Jacobian e^u.
        return _normal_loglik(bias - mu, var) + u

    kept = cfg.kept_per_chain
    out_mu = np.empty(kept)
    out_s2 = np.empty(kept)
    total = cfg.burn_in + kept * cfg.thinning
    k = 0
    for it in range(total):
        w = 1.0 / (sigma2 + se2)
        prec = 1.0 / priors.mu_var + w.sum()
        mean = (priors.mu_mean / priors.mu_var + np.dot(w, bias)) / prec
        mu = mean + rng.standard_normal() / math.sqrt(prec)

        if fixed_sigma2 is None:
            u0 = -math.log(sigma2)
            u1, _ = slice_sample(u0, log_post_logprec, adapter.width, rng, upper=log_upper)
            if it < cfg.burn_in:
                adapter.record(u1 - u0)
            sigma2 = math.exp(-u1)

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == cfg.thinning - 1:
            out_mu[k] = mu
            out_s2[k] = sigma2
            k += 1
    return {"mu": out_mu, "sigma2": out_s2}


def _run_chains(worker, cfg: McmcConfig):
    if cfg.workers > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(worker, range(cfg.chains)))
    else:
        results = [worker(c) for c in range(cfg.chains)]
    names = results[0].keys()
    return {n: np.vstack([r[n] for r in results]) for n in names}


def _finish(model, draws, cfg, priors) -> PosteriorSamples:
    samples = PosteriorSamples(model=model, draws=draws, config=cfg, priors=priors)
    if cfg.chains >= 2:
        report = diagnose(samples, max_lag=min(50, cfg.kept_per_chain - 1))
        samples.diagnostics = report
        bad = {p: r for p, r in report.rhat.items() if not r <= RHAT_THRESHOLD}
        if bad:
            msg = f"potential scale reduction above {RHAT_THRESHOLD}: " + ", ".join(
                f"{p}={r:.3f}" for p, r in bad.items()
            )
            samples.warnings.append(msg)
            warnings.warn(msg, ConvergenceWarning, stacklevel=3)
    return samples


def fit_constant_arrays(
    bias,
    se,
    config: McmcConfig | None = None,
    priors: Priors | None = None,
    fixed_sigma2: float | None = None,
) -> PosteriorSamples:
    """Sample ``(mu, sigma2)`` of the constant bias model from raw arrays.

    ``fixed_sigma2`` pins the bias variance, reducing the sampler to the
    conjugate Normal update for ``mu``.
    """
    cfg = config or McmcConfig()
    priors = priors or Priors()
    bias, se, _ = _check_inputs(bias, se)
    se2 = se**2
    worker = lambda c: _run_constant_chain(c, bias, se2, cfg, priors, fixed_sigma2)
    return _finish(CONSTANT, _run_chains(worker, cfg), cfg, priors)


def fit_constant(
    train: ControlSet, config: McmcConfig | None = None, priors: Priors | None = None
) -> PosteriorSamples:
    """Posterior draws of the constant bias model fitted to labelled controls."""
    if len(train) == 0:
        raise ValidationError("training set is empty")
    train.require_labelled("fit_constant")
    bias = train.log_estimates - train.log_true_effects
    return fit_constant_arrays(bias, train.standard_errors, config, priors)


# -- explicit-bias constant model ------------------------------------------


def _truncated_gamma(rng, shape, rate, upper):
    dist = stats.gamma(shape, scale=1.0 / rate)
    cdf_up = dist.cdf(upper)
    if cdf_up > 1e-12:
        return float(dist.ppf(rng.random() * cdf_up))
    # Mass sits far above the bound; the truncated density near ``upper`` is
    # proportional to exp(-(rate - (shape - 1) / upper) * (upper - x)).
    slope = rate - (shape - 1.0) / upper
    return float(upper + math.log(rng.random()) / -slope) if slope < 0 else upper


def _run_explicit_chain(chain, bias, se2, cfg, priors):
    rng = cfg.chain_rng(chain)
    n = bias.size
    mu = priors.mu_mean + cfg.init_sd * rng.standard_normal()
    sigma2 = _init_sigma2(rng, cfg, priors)
    kept = cfg.kept_per_chain
    out_mu = np.empty(kept)
    out_s2 = np.empty(kept)
    k = 0
    for it in range(cfg.burn_in + kept * cfg.thinning):
        v = 1.0 / (1.0 / se2 + 1.0 / sigma2)
        beta = v * (bias / se2 + mu / sigma2) + np.sqrt(v) * rng.standard_normal(n)

        prec = 1.0 / priors.mu_var + n / sigma2
        mean = (priors.mu_mean / priors.mu_var + beta.sum() / sigma2) / prec
        mu = mean + rng.standard_normal() / math.sqrt(prec)

        ss = float(np.sum((beta - mu) ** 2))
        p = _truncated_gamma(rng, n / 2.0 + 1.0, ss / 2.0, priors.precision_upper)
        sigma2 = 1.0 / p

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thinning == cfg.thinning - 1:
            out_mu[k] = mu
            out_s2[k] = sigma2
            k += 1
    return {"mu": out_mu, "sigma2": out_s2}


def fit_constant_explicit_arrays(
    bias, se, config: McmcConfig | None = None, priors: Priors | None = None
) -> PosteriorSamples:
    """Constant bias model sampled with the per-control true biases kept explicit.

    Every update is an exact conjugate draw: true biases, then ``mu``, then
    the precision from a Gamma truncated to the prior support. Mixing is
    slower than the marginalized sampler; it exists as a cross-check.
    """
    cfg = config or McmcConfig()
    priors = priors or Priors()
    bias, se, _ = _check_inputs(bias, se)
    worker = lambda c: _run_explicit_chain(c, bias, se**2, cfg, priors)
    return _finish(CONSTANT, _run_chains(worker, cfg), cfg, priors)


# -- linear model ------------------------------------------------------------


def _run_linear_chain(chain, bias, se2, theta, cfg, priors):
    rng = cfg.chain_rng(chain)
    abs_t = np.abs(theta)
    X = np.column_stack([np.ones_like(theta), theta])
    prior_prec = np.diag([1.0 / priors.mu_var, 1.0 / priors.slope_mean_var])
    prior_shift = np.array([priors.mu_mean / priors.mu_var, 0.0])
    log_upper = math.log(priors.precision_upper)

    mu = priors.mu_mean + cfg.init_sd * rng.standard_normal()
    slope_mean = cfg.init_sd * rng.standard_normal()
    sigma2 = _init_sigma2(rng, cfg, priors)
    slope_var = cfg.init_sd * rng.standard_normal()
    if np.any(sigma2 + slope_var * abs_t + se2 <= 0):
        slope_var = 0.0
    w_prec = WidthAdapter(1.0)
    w_svar = WidthAdapter(0.1)

    def resid():
        return bias - mu - slope_mean * theta

    def log_post_logprec(u):
        if u >= log_upper:
            return -math.inf
        var = math.exp(-u) + slope_var * abs_t + se2
        if np.any(var <= 0):
            return -math.inf
        return _normal_loglik(r, var) + u

    def log_post_svar(dv):
        var = sigma2 + dv * abs_t + se2
        if np.any(var <= 0):
            return -math.inf
        return _normal_loglik(r, var) - 0.5 * dv * dv / priors.slope_var_var

    kept = cfg.kept_per_chain
    out = {k: np.empty(kept) for k in ("mu", "sigma2", "slope_mean", "slope_var")}
    k = 0
    for it in range(cfg.burn_in + kept * cfg.thinning):
        w = 1.0 / (sigma2 + slope_var * abs_t + se2)
        A = X.T @ (X * w[:, None]) + prior_prec
        L = np.linalg.cholesky(A)
        rhs = X.T @ (w * bias) + prior_shift
        m = np.linalg.solve(A, rhs)
        # A = L L^T, so solving L^T x = z gives x ~ N(0, A^{-1}).
        draw = m + np.linalg.solve(L.T, rng.standard_normal(2))
        mu, slope_mean = float(draw[0]), float(draw[1])

        r = resid()
        u0 = -math.log(sigma2)
        u1, _ = slice_sample(u0, log_post_logprec, w_prec.width, rng, upper=log_upper)
        sigma2 = math.exp(-u1)

        d0 = slope_var
        slope_var, _ = slice_sample(d0, log_post_svar, w_svar.width, rng)

        if it < cfg.burn_in:
            w_prec.record(u1 - u0)
            w_svar.record(slope_var - d0)
        elif (it - cfg.burn_in) % cfg.thinning == cfg.thinning - 1:
            out["mu"][k] = mu
            out["sigma2"][k] = sigma2
            out["slope_mean"][k] = slope_mean
            out["slope_var"][k] = slope_var
            k += 1
    return out


def fit_linear_arrays(
    bias, se, theta, config: McmcConfig | None = None, priors: Priors | None = None
) -> PosteriorSamples:
    """Sample the linear bias model; ``theta`` holds log true effect sizes."""
    cfg = config or McmcConfig()
    priors = priors or Priors()
    bias, se, theta = _check_inputs(bias, se, theta)
    if np.unique(np.round(theta, 12)).size < 2:
        raise IdentifiabilityError(
            "linear bias model needs at least two distinct true effect sizes"
        )
    worker = lambda c: _run_linear_chain(c, bias, se**2, theta, cfg, priors)
    return _finish(LINEAR, _run_chains(worker, cfg), cfg, priors)


def fit_linear(
    train: ControlSet, config: McmcConfig | None = None, priors: Priors | None = None
) -> PosteriorSamples:
    if len(train) == 0:
        raise ValidationError("training set is empty")
    train.require_labelled("fit_linear")
    theta = train.log_true_effects
    bias = train.log_estimates - theta
    return fit_linear_arrays(bias, train.standard_errors, theta, config, priors)
