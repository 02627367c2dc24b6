"""Independent reference computations used by the tests.

Nothing here imports the code under test. Grid and quadrature routines
evaluate the same likelihoods from scratch so that agreement is evidence,
not tautology.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import optimize, stats


def two_sided_p_mp(z: float, dps: int = 50) -> float:
    mpmath.mp.dps = dps
    return float(mpmath.erfc(abs(mpmath.mpf(z)) / mpmath.sqrt(2)))


def null_loglik_grid(bias, se, nus, sigma2s):
    """Closed-form marginal log-likelihood on a (nu, sigma2) grid."""
    bias = np.asarray(bias)[:, None, None]
    var = np.asarray(sigma2s)[None, None, :] + np.asarray(se)[:, None, None] ** 2
    r = bias - np.asarray(nus)[None, :, None]
    return -0.5 * np.sum(np.log(2 * np.pi * var) + r**2 / var, axis=0)


def grid_argmax_null(bias, se, nu_range, s2_range, n=201, zooms=6):
    """Zooming grid search for the maximum of the empirical-null likelihood."""
    (nlo, nhi), (slo, shi) = nu_range, s2_range
    best = None
    for _ in range(zooms):
        nus = np.linspace(nlo, nhi, n)
        s2s = np.linspace(slo, shi, n)
        ll = null_loglik_grid(bias, se, nus, s2s)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        best = (nus[i], s2s[j], ll[i, j])
        dn, ds = (nhi - nlo) / (n - 1), (shi - slo) / (n - 1)
        nlo, nhi = nus[i] - 3 * dn, nus[i] + 3 * dn
        slo, shi = max(s2s[j] - 3 * ds, 0.0), s2s[j] + 3 * ds
    return best


def marginal_loglik_by_quadrature(est, se, nu, sigma2):
    """log of int N(est; b, se^2) N(b; nu, sigma2) db by adaptive quadrature.

    The integrand is rescaled by its value at the peak and integrated over a
    window wide enough to hold all its mass, so far-apart arguments do not
    underflow.
    """
    from scipy import integrate

    prec = 1 / se**2 + 1 / sigma2
    peak = (est / se**2 + nu / sigma2) / prec
    width = 15 / math.sqrt(prec)
    logf = lambda b: stats.norm.logpdf(est, b, se) + stats.norm.logpdf(b, nu, math.sqrt(sigma2))
    ref = logf(peak)
    val, _ = integrate.quad(
        lambda b: math.exp(logf(b) - ref), peak - width, peak + width,
        points=[peak], epsabs=0, epsrel=1e-12, limit=500,
    )
    return ref + math.log(val)


def systematic_loglik(params, est, se, theta):
    a, b, c, d = params
    var = c + d * np.abs(theta) + se**2
    if np.any(var <= 0):
        return -np.inf
    r = est - theta - a - b * theta
    return float(-0.5 * np.sum(np.log(2 * np.pi * var) + r**2 / var))


def grid_argmax_systematic(est, se, theta, centre, half, n=9, zooms=8):
    """Zooming 4-D grid search; ``centre``/``half`` define the initial box."""
    centre = np.array(centre, float)
    half = np.array(half, float)
    best = (None, -np.inf)
    for _ in range(zooms):
        axes = [np.linspace(c - h, c + h, n) for c, h in zip(centre, half)]
        axes[2] = np.clip(axes[2], 0.0, None)
        for a in axes[0]:
            for b in axes[1]:
                for c in axes[2]:
                    for d in axes[3]:
                        ll = systematic_loglik((a, b, c, d), est, se, theta)
                        if ll > best[1]:
                            best = ((a, b, c, d), ll)
        centre = np.array(best[0])
        half = half * 3.0 / (n - 1)
    return best


class ConstantGridPosterior:
    """Dense (mu, precision) grid posterior of the constant bias model.

    Prior: mu ~ N(prior_mean, prior_var), precision ~ U(0, upper). For each
    precision the likelihood in mu is evaluated from sufficient statistics
    of the marginal Normal likelihood, on an explicit mu grid.
    """

    def __init__(self, bias, se, mu_grid, prec_grid, prior_mean=0.0, prior_var=50.0):
        bias = np.asarray(bias, float)
        se2 = np.asarray(se, float) ** 2
        self.mu = np.asarray(mu_grid, float)
        self.prec = np.asarray(prec_grid, float)
        logp = np.empty((self.mu.size, self.prec.size))
        for j, p in enumerate(self.prec):
            v = 1.0 / p + se2
            A, B, C, D = np.sum(1 / v), np.sum(bias / v), np.sum(bias**2 / v), np.sum(np.log(v))
            logp[:, j] = -0.5 * (D + C - 2 * self.mu * B + self.mu**2 * A)
        logp += -0.5 * (self.mu[:, None] - prior_mean) ** 2 / prior_var
        logp -= logp.max()
        w = np.exp(logp)
        self.weights = w / w.sum()

    @property
    def mu_marginal(self):
        return self.weights.sum(axis=1)

    @property
    def prec_marginal(self):
        return self.weights.sum(axis=0)

    def mean_mu(self):
        return float(np.dot(self.mu_marginal, self.mu))

    def mean_sigma2(self):
        return float(np.dot(self.prec_marginal, 1.0 / self.prec))

    @staticmethod
    def _quantile(values, probs, q):
        # Interpolated inverse of the cumulative grid mass at cell midpoints.
        cdf = np.cumsum(probs) - 0.5 * probs
        return float(np.interp(q, cdf, values))

    def mu_quantile(self, q):
        return self._quantile(self.mu, self.mu_marginal, q)

    def sigma2_quantile(self, q):
        return 1.0 / self._quantile(self.prec, self.prec_marginal, 1.0 - q)

    def predictive_interval(self, log_estimate, se, level=0.95, thin=4):
        """Equal-tailed interval of the log true effect for a new estimate."""
        w = self.weights[::thin, ::thin]
        w = w / w.sum()
        mu = self.mu[::thin][:, None]
        sd = np.sqrt(1.0 / self.prec[::thin][None, :] + se**2)
        mask = w > 1e-12
        wm, loc, sc = w[mask], np.broadcast_to(log_estimate - mu, w.shape)[mask], np.broadcast_to(sd, w.shape)[mask]
        cdf = lambda x: float(np.dot(wm, stats.norm.cdf((x - loc) / sc)))
        a = (1 - level) / 2
        lo_b, hi_b = log_estimate - 5, log_estimate + 5
        lower = optimize.brentq(lambda x: cdf(x) - a, lo_b, hi_b, xtol=1e-10)
        upper = optimize.brentq(lambda x: cdf(x) - (1 - a), lo_b, hi_b, xtol=1e-10)
        return lower, upper


def linear_grid_mode(bias, se, theta, grids, prior_var=50.0, upper=100.0):
    """Posterior mode of the linear bias model on a coarse 4-D grid."""
    mus, slopes, s2s, dvs = grids
    best, arg = -np.inf, None
    se2 = se**2
    for s2 in s2s:
        if not 1 / s2 < upper:
            continue
        for dv in dvs:
            var = s2 + dv * np.abs(theta) + se2
            if np.any(var <= 0):
                continue
            for mu in mus:
                for c in slopes:
                    r = bias - mu - c * theta
                    lp = -0.5 * np.sum(np.log(var) + r * r / var)
                    lp += -0.5 * (mu**2 + c**2 + dv**2) / prior_var - 2 * math.log(s2)
                    if lp > best:
                        best, arg = lp, (mu, c, s2, dv)
    return arg


def gelman_rubin_split(chains):
    """Textbook split-chain potential scale reduction."""
    chains = np.asarray(chains, float)
    n = chains.shape[1] // 2
    x = np.vstack([chains[:, :n], chains[:, -n:]])
    m = x.shape[0]
    W = np.mean([np.var(c, ddof=1) for c in x])
    means = x.mean(axis=1)
    B = n * np.sum((means - means.mean()) ** 2) / (m - 1)
    V = (n - 1) / n * W + B / n
    return math.sqrt(V / W)


def batch_means_se(chains, batches: int = 20) -> float:
    """Monte Carlo standard error of the mean from non-overlapping batch means."""
    chains = np.atleast_2d(np.asarray(chains, float))
    m, n = chains.shape
    size = n // batches
    means = chains[:, : size * batches].reshape(m, batches, size).mean(axis=2).reshape(-1)
    return float(means.std(ddof=1) / math.sqrt(means.size))


def linear_theta0_interval(est, se, mu, slope_mean, sigma2, slope_var, prior_var=50.0, level=0.95):
    """Quantiles of theta0 for a single linear-model parameter value, by quadrature.

    Density: N(theta0; 0, prior_var) * N(est; theta0 + mu + slope_mean*theta0,
    sigma2 + slope_var*|theta0| + se^2), normalised on a fine grid.
    """
    t = np.linspace(est - 3, est + 3, 600001)
    var = sigma2 + slope_var * np.abs(t) + se**2
    logp = -0.5 * t**2 / prior_var - 0.5 * np.log(var) - 0.5 * (est - t - mu - slope_mean * t) ** 2 / var
    p = np.exp(logp - logp.max())
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    a = (1 - level) / 2
    return float(np.interp(a, cdf, t)), float(np.interp(1 - a, cdf, t))
