"""Convergence diagnostics for multi-chain MCMC output.

Potential scale reduction uses split chains (each chain halved) with the
classic Gelman-Rubin variance estimate. Effective sample size follows Geyer's
initial monotone sequence estimator applied to the multi-chain
autocorrelation, as in Stan and ArviZ.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError

RHAT_THRESHOLD = 1.1


def autocorrelation(x, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelation of a 1-D series via FFT. Lag 0 is exactly 1."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n]
    if acov[0] == 0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    acf = acov[: max_lag + 1] / acov[0]
    acf[0] = 1.0
    return acf


def _split(chains: np.ndarray) -> np.ndarray:
    m, n = chains.shape
    half = n // 2
    if half < 2:
        return chains
    return np.vstack([chains[:, :half], chains[:, n - half:]])


def potential_scale_reduction(chains) -> float:
    """Split-chain potential scale reduction for a ``(chains, draws)`` array."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    if chains.shape[0] < 2:
        raise ValidationError("potential scale reduction needs at least 2 chains")
    x = _split(chains)
    m, n = x.shape
    means = x.mean(axis=1)
    within = x.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def effective_sample_size(chains) -> float:
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    acov = np.array([autocorrelation(c) * c.var() for c in chains])
    means = chains.mean(axis=1)
    w = acov[:, 0].mean() * n / (n - 1)
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += means.var(ddof=1)
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer: sum consecutive pairs while positive, enforcing monotone decrease.
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        if pair_sums and s > pair_sums[-1]:
            s = pair_sums[-1]
        pair_sums.append(s)
        t += 2
    tau = -1.0 + 2.0 * float(np.sum(pair_sums))
    tau = max(tau, 1.0 / np.log10(m * n)) if m * n > 1 else tau
    return float(m * n / tau)


def mc_standard_error(chains) -> float:
    """Monte Carlo standard error of the posterior mean, via ESS."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    return float(chains.std(ddof=1) / np.sqrt(effective_sample_size(chains)))


@dataclass
class DiagnosticReport:
    rhat: dict[str, float]
    ess: dict[str, float]
    autocorr: dict[str, np.ndarray]
    notices: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(r <= RHAT_THRESHOLD for r in self.rhat.values())


def diagnose(samples, max_lag: int = 50) -> DiagnosticReport:
    """Per-parameter scale reduction, ESS and pooled lag autocorrelations."""
    rhat, ess, acf = {}, {}, {}
    notices = []
    if samples.n_chains < 2:
        notices.append("single chain: potential scale reduction omitted")
    for name in samples.param_names:
        x = samples.draws[name]
        if samples.n_chains >= 2:
            rhat[name] = potential_scale_reduction(x)
        ess[name] = effective_sample_size(x)
        lag = max(0, min(max_lag, x.shape[1] - 1))
        acf[name] = np.mean([autocorrelation(c, lag) for c in x], axis=0)
    return DiagnosticReport(rhat=rhat, ess=ess, autocorr=acf, notices=notices)


def _csv_text(header, rows, provenance=None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write(provenance.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x: float) -> str:
    return format(float(x), ".10g")


def write_diagnostics(
    samples, out_dir, max_lag: int = 50, bins: int = 30, provenance: str | None = None
) -> list[Path]:
    """Write summary, trace, histogram, ECDF and autocorrelation CSVs.

    Returns the written paths. Each plot-ready series gets its own file per
    parameter, named ``<kind>_<param>.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = diagnose(samples, max_lag=max_lag)
    written = []

    def emit(name, header, rows):
        p = out / name
        p.write_text(_csv_text(header, rows, provenance), encoding="utf-8")
        written.append(p)

    emit(
        "summary.csv",
        ["parameter", "mean", "sd", "q2.5", "q97.5", "rhat", "ess"],
        [
            [
                name,
                _g(samples.draws[name].mean()),
                _g(samples.draws[name].std(ddof=1)),
                _g(np.quantile(samples.draws[name], 0.025)),
                _g(np.quantile(samples.draws[name], 0.975)),
                _g(report.rhat[name]) if name in report.rhat else "",
                _g(report.ess[name]),
            ]
            for name in samples.param_names
        ],
    )
    for name in samples.param_names:
        x = samples.draws[name]
        emit(
            f"trace_{name}.csv",
            ["chain", "iter", name],
            [[c, i, _g(v)] for c in range(x.shape[0]) for i, v in enumerate(x[c])],
        )
        counts, edges = np.histogram(x.reshape(-1), bins=bins)
        emit(
            f"hist_{name}.csv",
            ["bin_left", "bin_right", "count"],
            [[_g(edges[i]), _g(edges[i + 1]), int(counts[i])] for i in range(bins)],
        )
        xs = np.sort(x.reshape(-1))
        emit(
            f"ecdf_{name}.csv",
            [name, "ecdf"],
            [[_g(v), _g((i + 1) / xs.size)] for i, v in enumerate(xs)],
        )
        emit(
            f"acf_{name}.csv",
            ["lag", "autocorrelation"],
            [[lag, _g(v)] for lag, v in enumerate(report.autocorr[name])],
        )
    if report.notices:
        emit("notices.csv", ["notice"], [[n] for n in report.notices])
    return written
