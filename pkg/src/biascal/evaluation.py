"""Coverage and RMSE evaluation of calibrated vs uncalibrated intervals."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .bayes import McmcConfig, Priors, calibrate_posterior, fit_constant, fit_linear
from .controls import (
    ControlSet,
    SplitPlan,
    filter_negative_only,
    rotate_families,
    split_by_family,
)
from .empirical_null import fit_null
from .errors import ValidationError
from .systematic_error import (
    CalibratedInterval,
    SystematicErrorModel,
    calibrated_ci,
    fit_systematic,
    wald_interval,
)

NEG_POS = "neg_pos_train"
NEG_ONLY = "neg_only_train"
DESIGNS = (NEG_POS, NEG_ONLY)
MODELS = ("constant", "linear", "frequentist")
NOMINAL = 0.95


@dataclass
class CoverageReport:
    """Per true-effect-size coverage of a batch of intervals."""

    coverage: dict[float, float]
    counts: dict[float, int]
    method: str = ""
    model: str = ""
    design: str = ""
    database_id: str = ""

    @property
    def effect_sizes(self) -> list[float]:
        return sorted(self.coverage)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def coverage(
    intervals: Iterable[tuple[CalibratedInterval, float]], **labels
) -> CoverageReport:
    """Fraction of closed intervals containing ``log(true effect)``, by effect size."""
    hits: dict[float, int] = defaultdict(int)
    counts: dict[float, int] = defaultdict(int)
    for interval, true_effect in intervals:
        if true_effect is None or not true_effect > 0:
            raise ValidationError("every interval needs a positive true effect size")
        t = math.log(true_effect)
        counts[true_effect] += 1
        hits[true_effect] += int(interval.lower <= t <= interval.upper)
    if not counts:
        raise ValidationError("coverage of an empty collection is undefined")
    cov = {k: hits[k] / counts[k] for k in sorted(counts)}
    return CoverageReport(cov, dict(sorted(counts.items())), **labels)


def rmse(report: CoverageReport, w: float = NOMINAL) -> float:
    """Root mean squared deviation of per-effect-size coverage from ``w``.

    Groups are weighted equally regardless of how many intervals each holds.
    """
    dev = [(c - w) ** 2 for c in report.coverage.values()]
    return math.sqrt(sum(dev) / len(dev))


@dataclass
class ProtocolResult:
    calibrated: CoverageReport
    uncalibrated: CoverageReport
    rmse_calibrated: float
    rmse_uncalibrated: float
    plans: list[SplitPlan]
    test: ControlSet
    calibrated_intervals: list[CalibratedInterval]
    uncalibrated_intervals: list[CalibratedInterval]
    fit: object = field(default=None, repr=False)


def record_seed(seed: int, index: int) -> int:
    """Independent per-record seed for predictive draws, spawned from ``seed``."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1, np.uint64)[0])


def _fit_and_calibrator(train: ControlSet, model: str, design: str, config: McmcConfig, priors):
    if model == "constant":
        samples = fit_constant(train, config, priors)
        return samples, lambda i, est, se, level: calibrate_posterior(
            samples, est, se, level, seed=record_seed(config.seed, i)
        )
    if model == "linear":
        samples = fit_linear(train, config, priors)
        return samples, lambda i, est, se, level: calibrate_posterior(
            samples, est, se, level, seed=record_seed(config.seed, i)
        )
    if design == NEG_ONLY:
        null = fit_null(train)
        sem = SystematicErrorModel(a=null.nu, b=0.0, c=null.sigma2, d=0.0, n_controls=null.n_controls)
    else:
        sem = fit_systematic(train)
    return sem, lambda i, est, se, level: calibrated_ci(sem, est, se, level)


def run_protocol(
    universe: ControlSet,
    design: str = NEG_POS,
    model: str = "constant",
    config: McmcConfig | None = None,
    seed: int = 0,
    fraction: float = 0.8,
    level: float = NOMINAL,
    folds: int | None = None,
    priors: Priors | None = None,
) -> ProtocolResult:
    """Split by family, fit on the train side, and score intervals on the test side.

    ``seed`` drives the split; MCMC and predictive draws use ``config.seed``.
    With ``folds`` set, families are rotated through ``folds`` disjoint test
    groups (each fit trains on the remaining families, ignoring ``fraction``)
    and coverage is pooled over every family. ``priors`` applies to the
    Bayesian models only.
    """
    if design not in DESIGNS:
        raise ValidationError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if model not in MODELS:
        raise ValidationError(f"unknown model {model!r}; expected one of {MODELS}")
    if model == "linear" and design == NEG_ONLY:
        raise ValidationError(
            "the linear bias model cannot be trained on negative controls only: "
            "its slope terms need more than one true effect size; use the constant model"
        )
    config = config or McmcConfig(seed=seed)
    universe.require_labelled("run_protocol")
    if folds is None:
        plans = [split_by_family(universe, fraction, seed)]
    else:
        plans = rotate_families(universe, folds, seed)

    test_records, cal, unc, fits = [], [], [], []
    for plan in plans:
        train = plan.train(universe)
        if design == NEG_ONLY:
            train = filter_negative_only(train)
        fit, calibrate = _fit_and_calibrator(train, model, design, config, priors)
        fits.append(fit)
        for rec in plan.test(universe):
            i = len(test_records)
            test_records.append(rec)
            cal.append(calibrate(i, rec.log_estimate, rec.se_log_estimate, level))
            unc.append(wald_interval(rec.log_estimate, rec.se_log_estimate, level))

    test = ControlSet(test_records, universe.database_id, universe.analysis)
    truth = [r.true_effect_size for r in test]
    labels = dict(model=model, design=design, database_id=universe.database_id)
    rep_cal = coverage(zip(cal, truth), method="calibrated", **labels)
    rep_unc = coverage(zip(unc, truth), method="uncalibrated", **labels)
    return ProtocolResult(
        calibrated=rep_cal,
        uncalibrated=rep_unc,
        rmse_calibrated=rmse(rep_cal),
        rmse_uncalibrated=rmse(rep_unc),
        plans=plans,
        test=test,
        calibrated_intervals=cal,
        uncalibrated_intervals=unc,
        fit=fits[0] if len(fits) == 1 else fits,
    )


# -- figure data ---------------------------------------------------------------


def _g(x) -> str:
    return format(float(x), ".10g")


def _csv(header: list[str], rows, provenance: str | None) -> str:
    buf = io.StringIO()
    if provenance:
        buf.write(provenance.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _theta_tag(t: float) -> str:
    return format(t, "g")


def emit_figures(
    results: list[ProtocolResult],
    out_dir,
    svg: bool = False,
    provenance: str | None = None,
    w: float = NOMINAL,
) -> list[Path]:
    """Write coverage, RMSE and per-effect-size scatter tables (and optional SVGs).

    Scatter files hold one row per test record per result with the estimate,
    its standard error and whether each interval covered the truth.
    """
    if not results:
        raise ValidationError("no protocol results to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written: list[Path] = []

    def put(name: str, text: str):
        p = out / name
        p.write_text(text, encoding="utf-8")
        written.append(p)

    cov_rows, rmse_rows = [], []
    scatter: dict[float, list] = defaultdict(list)
    for res in results:
        for rep, r in ((res.calibrated, res.rmse_calibrated), (res.uncalibrated, res.rmse_uncalibrated)):
            for t in rep.effect_sizes:
                cov_rows.append(
                    [rep.database_id, rep.model, rep.design, rep.method, _theta_tag(t),
                     _g(rep.coverage[t]), rep.counts[t]]
                )
            rmse_rows.append([rep.database_id, rep.model, rep.design, rep.method, _g(r)])
        for rec, ci, wi in zip(res.test, res.calibrated_intervals, res.uncalibrated_intervals):
            lt = math.log(rec.true_effect_size)
            scatter[rec.true_effect_size].append(
                [
                    rec.database_id, res.calibrated.model, res.calibrated.design,
                    rec.family_id, _g(rec.log_estimate), _g(rec.se_log_estimate),
                    _g(ci.lower), _g(ci.upper), int(ci.lower <= lt <= ci.upper),
                    _g(wi.lower), _g(wi.upper), int(wi.lower <= lt <= wi.upper),
                ]
            )

    put(
        "coverage.csv",
        _csv(["database_id", "model", "design", "method", "true_effect_size", "coverage", "n"],
             cov_rows, provenance),
    )
    put("rmse.csv", _csv(["database_id", "model", "design", "method", "rmse"], rmse_rows, provenance))
    header = ["database_id", "model", "design", "family_id", "log_estimate", "se_log_estimate",
              "cal_lower", "cal_upper", "cal_covered", "unc_lower", "unc_upper", "unc_covered"]
    for t in sorted(scatter):
        put(f"scatter_{_theta_tag(t)}.csv", _csv(header, scatter[t], provenance))

    if svg:
        written += _render_svgs(results, scatter, rmse_rows, out / "figures", provenance, w)
    return written


def _render_svgs(results, scatter, rmse_rows, fig_dir: Path, provenance, w) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "biascal"
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    def save(fig, name):
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
        text = buf.getvalue()
        if provenance:
            comment = "<!-- " + provenance.strip().lstrip("#").strip() + " -->\n"
            head, sep, rest = text.partition("?>\n")
            text = head + sep + comment + rest if sep else comment + text
        p = fig_dir / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)

    sizes = sorted(scatter)
    fig, axes = plt.subplots(2, len(sizes), figsize=(3.2 * len(sizes), 6), squeeze=False)
    for j, t in enumerate(sizes):
        rows = scatter[t]
        est = np.array([float(r[4]) for r in rows])
        se = np.array([float(r[5]) for r in rows])
        for i, (col, label) in enumerate(((8, "calibrated"), (11, "uncalibrated"))):
            ax = axes[i][j]
            ok = np.array([r[col] == 1 for r in rows])
            ax.scatter(est[ok], se[ok], s=6, c="tab:blue")
            ax.scatter(est[~ok], se[~ok], s=6, c="tab:orange")
            ax.axvline(math.log(t), color="k", lw=0.8)
            ax.set_title(f"{label}, true RR {_theta_tag(t)}: {ok.mean():.1%}", fontsize=8)
            ax.set_xlabel("log estimate", fontsize=8)
            ax.set_ylabel("standard error", fontsize=8)
    fig.tight_layout()
    save(fig, "scatter.svg")

    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"{r[1]}/{r[3]}" for r in rmse_rows]
    ax.bar(range(len(rmse_rows)), [float(r[4]) for r in rmse_rows], color="tab:gray")
    ax.set_xticks(range(len(rmse_rows)), labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel(f"coverage RMSE (w={w})")
    fig.tight_layout()
    save(fig, "rmse.svg")
    return paths
