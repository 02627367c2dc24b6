"""Synthetic positive controls and fully synthetic control universes.

Positive controls are made from a negative-control cohort by fitting an
L1-penalized Poisson outcome model and adding Poisson-distributed extra
outcomes until the cohort's incidence rate ratio reaches a target.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controls import ControlRecord, ControlSet
from .errors import ConvergenceError, ValidationError

DEFAULT_EFFECT_SIZES = (1.5, 2.0, 4.0)
MIN_COHORT_OUTCOMES = 25


@dataclass(frozen=True)
class SyntheticCohort:
    durations: np.ndarray
    counts: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.durations)
        y = np.asarray(self.counts)
        z = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if z.shape[0] != d.shape[0] and z.shape[1] == d.shape[0]:
            z = z.T
        if d.ndim != 1 or y.shape != d.shape or z.shape[0] != d.shape[0]:
            raise ValidationError("durations, counts and covariate rows must align")
        if np.any(d <= 0):
            raise ValidationError("all durations must be > 0")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValidationError("outcome counts must be non-negative integers")
        object.__setattr__(self, "durations", d.astype(float))
        object.__setattr__(self, "counts", y.astype(np.int64))
        object.__setattr__(self, "covariates", z)

    def __len__(self) -> int:
        return self.durations.size

    @property
    def total_outcomes(self) -> int:
        return int(self.counts.sum())

    @property
    def rate(self) -> float:
        """Outcomes per day across the whole cohort."""
        return self.counts.sum() / self.durations.sum()


def simulate_cohort(
    n_entries: int,
    n_covariates: int = 10,
    prevalence: float = 0.3,
    coefficients=None,
    base_rate: float = 1e-3,
    max_duration: int = 730,
    total_outcomes: int | None = None,
    seed: int = 0,
) -> SyntheticCohort:
    """Cohort with binary baseline covariates and Poisson outcome counts.

    With ``total_outcomes`` set, counts are a multinomial allocation of
    exactly that many events in proportion to each entry's expected count.
    """
    rng = np.random.default_rng(seed)
    z = (rng.random((n_entries, n_covariates)) < prevalence).astype(float)
    d = rng.integers(1, max_duration + 1, size=n_entries)
    beta = np.zeros(n_covariates) if coefficients is None else np.asarray(coefficients, float)
    lam = d * base_rate * np.exp(z @ beta)
    if total_outcomes is None:
        y = rng.poisson(lam)
    else:
        y = rng.multinomial(total_outcomes, lam / lam.sum())
    return SyntheticCohort(d, y, z)


def format_cohort(cohort: SyntheticCohort, counts=None, header: str | None = None) -> str:
    """CSV text ``duration_days,outcome_count,z1..zk``; ``counts`` overrides the counts."""
    counts = cohort.counts if counts is None else np.asarray(counts)
    buf = io.StringIO()
    if header:
        buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    k = cohort.covariates.shape[1]
    w.writerow(["duration_days", "outcome_count", *(f"z{j + 1}" for j in range(k))])
    for d, y, z in zip(cohort.durations, counts, cohort.covariates):
        w.writerow([format(d, "g"), int(y), *(format(v, "g") for v in z)])
    return buf.getvalue()


def read_cohort(path) -> SyntheticCohort:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"cohort file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    if not rows or rows[0][:2] != ["duration_days", "outcome_count"]:
        raise ValidationError(f"{path}: header must start with duration_days,outcome_count")
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValidationError(f"{path}: no cohort entries")
    return SyntheticCohort(data[:, 0], data[:, 1], data[:, 2:])


# -- L1-penalized Poisson regression ----------------------------------------


@dataclass(frozen=True)
class PoissonModel:
    """Poisson rate model ``E[y] = duration * exp(intercept + Z @ coef)``."""

    coefficients: np.ndarray
    l1_penalty: float
    penalty_path: np.ndarray = field(default_factory=lambda: np.empty(0), compare=False)
    cv_deviance: np.ndarray = field(default_factory=lambda: np.empty(0), compare=False)
    notice: str = ""

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]

    def predict(self, cohort: SyntheticCohort) -> np.ndarray:
        """Expected outcome count per entry (rate times duration)."""
        eta = self.intercept + cohort.covariates @ self.slopes
        return cohort.durations * np.exp(eta)


def poisson_deviance(y, mu) -> float:
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


class _Standardized:
    def __init__(self, z):
        self.mean = z.mean(axis=0)
        sd = z.std(axis=0)
        self.active = sd > 1e-12
        self.sd = np.where(self.active, sd, 1.0)

    def apply(self, z):
        return ((z - self.mean) / self.sd)[:, self.active]

    def to_original(self, b0, b):
        full = np.zeros(self.active.size)
        full[self.active] = b / self.sd[self.active]
        return b0 - float(np.dot(full, self.mean)), full


def _objective(y, offset, x, b0, b, lam):
    eta = offset + b0 + x @ b
    return float(np.mean(np.exp(eta) - y * eta) + lam * np.abs(b).sum())


def _kkt_violation(y, offset, x, b0, b, lam):
    mu = np.exp(offset + b0 + x @ b)
    g0 = np.mean(mu - y)
    g = x.T @ (mu - y) / y.size
    nz = b != 0
    viol = np.where(nz, np.abs(g + lam * np.sign(b)), np.maximum(np.abs(g) - lam, 0.0))
    return max(abs(g0), float(viol.max()) if viol.size else 0.0)


def _lasso_poisson(y, offset, x, lam, b0, b, tol=1e-6, max_outer=200, max_sweeps=2000):
    """Proximal Newton with cyclic coordinate descent on standardized columns."""
    n, p = x.shape
    b = b.copy()
    for _ in range(max_outer):
        if _kkt_violation(y, offset, x, b0, b, lam) <= tol:
            return b0, b
        eta = offset + b0 + x @ b
        mu = np.exp(eta)
        w = mu
        z = eta - offset + (y - mu) / mu
        nb0, nb = b0, b.copy()
        r = z - nb0 - x @ nb
        xw2 = (w[:, None] * x * x).sum(axis=0) / n
        sw = w.sum()
        for _ in range(max_sweeps):
            max_delta = 0.0
            d0 = np.dot(w, r) / sw
            nb0 += d0
            r -= d0
            max_delta = max(max_delta, abs(d0))
            for j in range(p):
                if xw2[j] <= 0:
                    continue
                old = nb[j]
                rho = np.dot(w * x[:, j], r) / n + xw2[j] * old
                new = np.sign(rho) * max(abs(rho) - lam, 0.0) / xw2[j]
                if new != old:
                    r -= x[:, j] * (new - old)
                    nb[j] = new
                    max_delta = max(max_delta, abs(new - old) * math.sqrt(xw2[j]))
            if max_delta < tol * 1e-2:
                break
        # Step-halving keeps the Newton step from overshooting.
        f_old = _objective(y, offset, x, b0, b, lam)
        step = 1.0
        while step > 1e-10:
            cb0 = b0 + step * (nb0 - b0)
            cb = b + step * (nb - b)
            if _objective(y, offset, x, cb0, cb, lam) <= f_old + 1e-15:
                break
            step *= 0.5
        if step <= 1e-10:
            if _kkt_violation(y, offset, x, b0, b, lam) <= tol * 10:
                return b0, b
            raise ConvergenceError("L1 Poisson fit failed to decrease the objective")
        # Exact zeros survive the step only at step=1; re-threshold tiny values.
        b0, b = cb0, np.where(np.abs(cb) < 1e-14, 0.0, cb)
    raise ConvergenceError(f"L1 Poisson fit did not converge in {max_outer} Newton steps")


def _fit_path(y, d, z, lambdas, tol=1e-6):
    std = _Standardized(z)
    x = std.apply(z)
    offset = np.log(d)
    b0 = math.log(y.sum() / d.sum())
    b = np.zeros(x.shape[1])
    out = []
    for lam in lambdas:
        b0, b = _lasso_poisson(y, offset, x, lam, b0, b, tol=tol)
        ob0, ob = std.to_original(b0, b)
        out.append(np.concatenate([[ob0], ob]))
    return out


def penalty_grid(cohort: SyntheticCohort, n_values: int = 30, ratio: float = 1e-3) -> np.ndarray:
    """Geometric grid from the smallest all-zero penalty down by ``ratio``."""
    y = cohort.counts.astype(float)
    x = _Standardized(cohort.covariates).apply(cohort.covariates)
    mu0 = cohort.durations * y.sum() / cohort.durations.sum()
    lam_max = float(np.max(np.abs(x.T @ (y - mu0))) / y.size) if x.shape[1] else 0.0
    if lam_max <= 0:
        return np.zeros(1)
    return lam_max * np.geomspace(1.0, ratio, n_values)


def fit_poisson_fixed(cohort: SyntheticCohort, l1_penalty: float) -> PoissonModel:
    """Fit at one penalty value (on the standardized covariate scale)."""
    y = cohort.counts.astype(float)
    if y.sum() == 0:
        return _all_zero_model(cohort)
    (coef,) = _fit_path(y, cohort.durations, cohort.covariates, [float(l1_penalty)])
    return PoissonModel(coef, float(l1_penalty))


def fit_poisson_path(cohort: SyntheticCohort, lambdas) -> list[PoissonModel]:
    y = cohort.counts.astype(float)
    lambdas = np.sort(np.asarray(lambdas, float))[::-1]
    coefs = _fit_path(y, cohort.durations, cohort.covariates, lambdas)
    return [PoissonModel(c, float(l)) for c, l in zip(coefs, lambdas)]


def _all_zero_model(cohort):
    msg = "no outcomes in cohort: intercept-only model with a 0.5-event continuity correction"
    warnings.warn(msg, stacklevel=3)
    coef = np.zeros(cohort.covariates.shape[1] + 1)
    coef[0] = math.log(0.5 / cohort.durations.sum())
    return PoissonModel(coef, math.inf, notice=msg)


def fit_poisson_l1(
    cohort: SyntheticCohort, folds: int = 10, seed: int = 0, n_penalties: int = 30
) -> PoissonModel:
    """L1-penalized Poisson regression with the penalty chosen by K-fold CV.

    Held-out Poisson deviance is averaged over folds for each penalty on the
    grid from :func:`penalty_grid`; the minimizer is refitted on all entries.
    """
    if folds < 2:
        raise ValidationError(f"need at least 2 folds, got {folds}")
    n = len(cohort)
    if n < folds:
        raise ValidationError(f"need at least {folds} entries for {folds}-fold CV, got {n}")
    y = cohort.counts.astype(float)
    if y.sum() == 0:
        return _all_zero_model(cohort)
    lambdas = penalty_grid(cohort, n_penalties)
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(np.arange(n) % folds)
    cv = np.zeros(lambdas.size)
    for k in range(folds):
        tr, te = fold_of != k, fold_of == k
        if y[tr].sum() == 0:
            continue
        coefs = _fit_path(y[tr], cohort.durations[tr], cohort.covariates[tr], lambdas)
        for i, coef in enumerate(coefs):
            mu = cohort.durations[te] * np.exp(coef[0] + cohort.covariates[te] @ coef[1:])
            cv[i] += poisson_deviance(y[te], mu)
    cv /= folds
    best = int(np.argmin(cv))
    coefs = _fit_path(y, cohort.durations, cohort.covariates, lambdas[: best + 1])
    return PoissonModel(coefs[-1], float(lambdas[best]), penalty_path=lambdas, cv_deviance=cv)


# -- injection ---------------------------------------------------------------


@dataclass(frozen=True)
class InjectionResult:
    modified_counts: np.ndarray
    achieved_ratio: float
    target_theta: float
    iterations: int
    seed: int


class InjectionFailure(ConvergenceError):
    def __init__(self, message, closest_ratio):
        super().__init__(message)
        self.closest_ratio = closest_ratio


def inject(
    cohort: SyntheticCohort,
    model: PoissonModel,
    theta: float,
    epsilon: float = 0.01,
    seed: int = 0,
    max_iter: int = 10000,
) -> InjectionResult:
    """Add simulated outcomes until the rate ratio is within ``epsilon`` of ``theta``.

    Every attempt starts again from the original counts, adding
    ``Poisson((theta - 1) * expected_count)`` outcomes to each entry.
    """
    if not theta > 1:
        raise ValidationError(f"theta must be > 1 (got {theta}); theta = 1 is a plain copy")
    if not epsilon > 0:
        raise ValidationError("epsilon must be > 0")
    total = cohort.total_outcomes
    if total < MIN_COHORT_OUTCOMES:
        raise ValidationError(
            f"cohort has {total} outcomes; positive controls need at least "
            f"{MIN_COHORT_OUTCOMES}"
        )
    lam = (theta - 1.0) * model.predict(cohort)
    if not np.all(np.isfinite(lam)) or np.any(lam < 0):
        raise ValidationError("model predictions must be finite and non-negative")
    rng = np.random.default_rng(seed)
    y = cohort.counts
    closest = math.nan
    for it in range(1, max_iter + 1):
        y_star = y + rng.poisson(lam)
        # Durations are unchanged, so the rate ratio is a ratio of totals.
        ratio = y_star.sum() / total
        if math.isnan(closest) or abs(ratio - theta) < abs(closest - theta):
            closest = ratio
        if abs(ratio - theta) <= epsilon:
            return InjectionResult(y_star, float(ratio), float(theta), it, seed)
    raise InjectionFailure(
        f"no injection within {epsilon} of theta={theta} after {max_iter} attempts "
        f"(closest ratio {closest:.4f})",
        closest,
    )


# -- synthetic control universes ---------------------------------------------


@dataclass(frozen=True)
class SimulationSpec:
    """Parameters of a synthetic negative/positive control universe.

    Bias of a control with log true effect ``t`` is drawn from
    ``N(bias_mean + bias_slope * t, bias_sd**2)``. Standard errors lie in
    ``[se_min, se_max]``, log-uniform by default (``se_scale="log"``) or
    uniform (``se_scale="linear"``).
    """

    families: int = 100
    bias_mean: float = 0.0
    bias_sd: float = 0.0
    bias_slope: float = 0.0
    se_min: float = 0.05
    se_max: float = 0.3
    seed: int = 0
    effect_sizes: tuple[float, ...] = DEFAULT_EFFECT_SIZES
    database_id: str = "sim"
    se_scale: str = "log"

    def __post_init__(self):
        if self.se_scale not in ("log", "linear"):
            raise ValidationError(f"se_scale must be 'log' or 'linear', got {self.se_scale!r}")
        if self.families < 2:
            raise ValidationError(f"need at least 2 families, got {self.families}")
        if not 0 < self.se_min <= self.se_max:
            raise ValidationError("need 0 < se_min <= se_max")
        if self.bias_sd < 0:
            raise ValidationError("bias_sd must be >= 0")


def simulate_control_universe(spec: SimulationSpec) -> ControlSet:
    rng = np.random.default_rng(spec.seed)
    width = len(str(spec.families - 1))
    sizes = (1.0, *spec.effect_sizes)
    n = spec.families * len(sizes)
    theta = np.tile(np.log(sizes), spec.families)
    bias = spec.bias_mean + spec.bias_slope * theta + spec.bias_sd * rng.standard_normal(n)
    if spec.se_scale == "log":
        se = np.exp(rng.uniform(math.log(spec.se_min), math.log(spec.se_max), n))
    else:
        se = rng.uniform(spec.se_min, spec.se_max, n)
    est = theta + bias + se * rng.standard_normal(n)
    records = []
    for f in range(spec.families):
        tag = f"{f:0{width}d}"
        for k, size in enumerate(sizes):
            i = f * len(sizes) + k
            records.append(
                ControlRecord(
                    database_id=spec.database_id,
                    target_id=f"T{tag}",
                    comparator_id=f"C{tag}",
                    outcome_id=f"O{tag}",
                    family_id=f"F{tag}",
                    true_effect_size=size,
                    log_estimate=float(est[i]),
                    se_log_estimate=float(se[i]),
                )
            )
    return ControlSet(records, database_id=spec.database_id, analysis="simulated")
