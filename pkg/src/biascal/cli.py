"""Command-line entry point: ``biascal <subcommand> [options]``.

Data goes to files, logs to stderr. Every artifact starts with a ``#``
provenance line carrying the tool version, subcommand and seed.

Exit status: 0 success, 2 usage error, 3 data validation error,
4 numerical failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from . import bayes
from .controls import filter_negative_only, load_controls, write_controls
from .empirical_null import NullDistribution, calibrated_p, fit_null
from .errors import BiasCalError, ValidationError
from .evaluation import DESIGNS, MODELS, NEG_ONLY, emit_figures, record_seed, run_protocol
from .provenance import __version__, header_line
from .synthesis import (
    SimulationSpec,
    fit_poisson_l1,
    format_cohort,
    inject,
    read_cohort,
    simulate_control_universe,
)
from .systematic_error import SystematicErrorModel, calibrated_ci, fit_systematic

log = logging.getLogger("biascal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
SEED_ENV = "BIASCAL_SEED"


def _default_seed() -> str:
    # Left as text so argparse's int conversion reports a bad value as a usage error.
    return os.environ.get(SEED_ENV, "0")


# -- small file formats -------------------------------------------------------


def write_keyvalue(path, values: dict, header: str) -> None:
    lines = [header.rstrip("\n")]
    lines += [f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}" for k, v in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_keyvalue(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _float_fields(kv: dict, names, path) -> dict[str, float]:
    try:
        return {n: float(kv[n]) for n in names}
    except KeyError as exc:
        raise ValidationError(f"{path}: missing key {exc}") from None
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _read_estimates(path):
    """Rows of an estimates CSV as dicts plus the column order."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"estimates file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = list(reader)
        columns = reader.fieldnames or []
    for col in ("log_estimate", "se_log_estimate"):
        if col not in columns:
            raise ValidationError(f"{path}: missing column {col!r}")
    parsed = []
    for i, row in enumerate(rows, 1):
        try:
            est, se = float(row["log_estimate"]), float(row["se_log_estimate"])
        except ValueError:
            raise ValidationError(f"{path}: row {i}: non-numeric estimate or se") from None
        if not se > 0:
            raise ValidationError(f"{path}: row {i}: se_log_estimate must be > 0")
        parsed.append((row, est, se))
    return parsed, columns


def _write_augmented(path, columns, rows, extra_cols, extra_vals, header) -> None:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*columns, *extra_cols])
    for (row, _, _), vals in zip(rows, extra_vals):
        w.writerow([*(row[c] for c in columns), *(repr(float(v)) for v in vals)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _mcmc_config(args) -> bayes.McmcConfig:
    return bayes.McmcConfig(
        chains=args.chains,
        burn_in=args.burn_in,
        samples=args.samples,
        thinning=args.thin,
        seed=args.seed,
        workers=args.workers,
    )


def _priors(args) -> bayes.Priors:
    return bayes.Priors(precision_upper=args.precision_upper)


# -- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> None:
    spec = SimulationSpec(
        families=args.families,
        bias_mean=args.bias_mean,
        bias_sd=args.bias_sd,
        bias_slope=args.bias_slope,
        se_min=args.se_min,
        se_max=args.se_max,
        se_scale=args.se_scale,
        seed=args.seed,
        database_id=args.database_id,
    )
    controls = simulate_control_universe(spec)
    write_controls(controls, args.out, header=header_line("simulate", args.seed))
    log.info("wrote %d controls (%d families) to %s", len(controls), args.families, args.out)


def cmd_fit_null(args) -> None:
    controls = load_controls(args.controls)
    if args.negatives_only:
        controls = filter_negative_only(controls)
    null = fit_null(controls)
    write_keyvalue(
        args.out,
        {
            "nu": null.nu,
            "sigma2": null.sigma2,
            "n_controls": null.n_controls,
            "log_likelihood": null.log_likelihood,
        },
        header_line("fit-null", args.seed),
    )


def cmd_calibrate_pvalue(args) -> None:
    kv = read_keyvalue(args.null)
    f = _float_fields(kv, ("nu", "sigma2"), args.null)
    null = NullDistribution(f["nu"], f["sigma2"], int(kv.get("n_controls", 0)), float("nan"))
    rows, columns = _read_estimates(args.estimates)
    ps = [(calibrated_p(null, est, se, args.alternative),) for _, est, se in rows]
    _write_augmented(
        args.out, columns, rows, ["cal_p"], ps,
        header_line("calibrate-pvalue", args.seed, alternative=args.alternative),
    )


def cmd_fit_systematic(args) -> None:
    m = fit_systematic(load_controls(args.controls))
    write_keyvalue(
        args.out,
        {
            "a": m.a, "b": m.b, "c": m.c, "d": m.d,
            "n_controls": m.n_controls,
            "log_likelihood": m.log_likelihood,
            "abs_theta_min": m.abs_theta_range[0],
            "abs_theta_max": m.abs_theta_range[1],
        },
        header_line("fit-systematic", args.seed),
    )


def cmd_calibrate_ci(args) -> None:
    kv = read_keyvalue(args.model)
    f = _float_fields(kv, ("a", "b", "c", "d"), args.model)
    model = SystematicErrorModel(**f)
    rows, columns = _read_estimates(args.estimates)
    vals = []
    for _, est, se in rows:
        ci = calibrated_ci(model, est, se, args.level)
        vals.append((ci.lower, ci.upper))
    _write_augmented(
        args.out, columns, rows, ["cal_lower", "cal_upper"], vals,
        header_line("calibrate-ci", args.seed, level=args.level),
    )


def cmd_bayes_fit(args) -> None:
    controls = load_controls(args.controls)
    cfg, priors = _mcmc_config(args), _priors(args)
    fit = bayes.fit_constant if args.model == "constant" else bayes.fit_linear
    samples = fit(controls, cfg, priors)
    for w in samples.warnings:
        log.warning(w)
    bayes.write_draws(
        samples, args.out,
        header=header_line("bayes-fit", args.seed, model=args.model,
                           precision_upper=args.precision_upper),
    )
    if samples.diagnostics is not None:
        for p in samples.param_names:
            log.info("%s: rhat=%.4f ess=%.0f", p, samples.diagnostics.rhat[p],
                     samples.diagnostics.ess[p])


def cmd_bayes_calibrate(args) -> None:
    samples = bayes.read_draws(args.draws)
    rows, columns = _read_estimates(args.estimates)
    vals = []
    for i, (_, est, se) in enumerate(rows):
        ci = bayes.calibrate_posterior(samples, est, se, args.level, seed=record_seed(args.seed, i))
        vals.append((ci.lower, ci.upper))
    _write_augmented(
        args.out, columns, rows, ["cal_lower", "cal_upper"], vals,
        header_line("bayes-calibrate", args.seed, model=samples.model, level=args.level,
                    draws_seed=samples.config.seed),
    )


def cmd_inject(args) -> None:
    cohort = read_cohort(args.cohort)
    model = fit_poisson_l1(cohort, folds=args.folds, seed=args.seed)
    res = inject(cohort, model, args.theta, args.epsilon, args.seed, args.max_iter)
    Path(args.out).write_text(
        format_cohort(
            cohort, res.modified_counts,
            header=header_line("inject", args.seed, theta=args.theta,
                               achieved_ratio=repr(res.achieved_ratio),
                               iterations=res.iterations),
        ),
        encoding="utf-8",
    )
    log.info("achieved ratio %.4f after %d attempts", res.achieved_ratio, res.iterations)


def cmd_evaluate(args) -> None:
    controls = load_controls(args.controls)
    result = run_protocol(
        controls,
        design=args.design,
        model=args.model,
        config=_mcmc_config(args),
        seed=args.seed,
        fraction=args.fraction,
        folds=args.folds,
        priors=_priors(args),
    )
    header = header_line("evaluate", args.seed, model=args.model, design=args.design)
    emit_figures([result], args.out_dir, svg=args.figures, provenance=header)
    log.info(
        "RMSE calibrated %.4f, uncalibrated %.4f",
        result.rmse_calibrated, result.rmse_uncalibrated,
    )


def cmd_diagnostics(args) -> None:
    samples = bayes.read_draws(args.draws)
    if samples.n_chains < 2:
        log.warning("single chain: potential scale reduction omitted")
    bayes.write_diagnostics(
        samples, args.out_dir, max_lag=args.max_lag,
        provenance=header_line("diagnostics", args.seed),
    )


# -- parser -------------------------------------------------------------------


def _add_mcmc(p):
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--workers", type=int, default=1, help="threads for parallel chains")
    p.add_argument(
        "--precision-upper", type=float, default=100.0,
        help="upper end of the Uniform prior on 1/sigma2",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_default_seed(),
                        help=f"random seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--config", help="JSON file of option defaults; flags override it")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(
        prog="biascal",
        description="Calibrate observational effect estimates with negative and positive controls.",
    )
    parser.add_argument("--version", action="version", version=f"biascal {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    parser.subcommands = {}

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(func=func)
        parser.subcommands[name] = p
        return p

    p = add("simulate", cmd_simulate, "simulate a control universe CSV")
    p.add_argument("--families", type=int, default=100)
    p.add_argument("--bias-mean", type=float, default=0.0)
    p.add_argument("--bias-sd", type=float, default=0.0)
    p.add_argument("--bias-slope", type=float, default=0.0)
    p.add_argument("--se-min", type=float, default=0.05)
    p.add_argument("--se-max", type=float, default=0.3)
    p.add_argument("--se-scale", choices=("log", "linear"), default="log")
    p.add_argument("--database-id", default="sim")
    p.add_argument("-o", "--out", required=True)

    p = add("fit-null", cmd_fit_null, "fit the empirical null to negative controls")
    p.add_argument("--controls", required=True)
    p.add_argument("--negatives-only", action="store_true",
                   help="drop positive controls instead of rejecting the file")
    p.add_argument("-o", "--out", required=True)

    p = add("calibrate-pvalue", cmd_calibrate_pvalue, "append calibrated p-values to estimates")
    p.add_argument("--null", required=True, help="output of fit-null")
    p.add_argument("--estimates", required=True)
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("-o", "--out", required=True)

    p = add("fit-systematic", cmd_fit_systematic, "fit the systematic error model")
    p.add_argument("--controls", required=True)
    p.add_argument("-o", "--out", required=True)

    p = add("calibrate-ci", cmd_calibrate_ci, "append calibrated confidence intervals")
    p.add_argument("--model", required=True, help="output of fit-systematic")
    p.add_argument("--estimates", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("-o", "--out", required=True)

    p = add("bayes-fit", cmd_bayes_fit, "sample a Bayesian bias model and write draws")
    p.add_argument("--controls", required=True)
    p.add_argument("--model", choices=("constant", "linear"), default="constant")
    _add_mcmc(p)
    p.add_argument("-o", "--out", required=True)

    p = add("bayes-calibrate", cmd_bayes_calibrate, "append posterior intervals to estimates")
    p.add_argument("--draws", required=True)
    p.add_argument("--estimates", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("-o", "--out", required=True)

    p = add("inject", cmd_inject, "inject outcomes into a cohort to reach a target rate ratio")
    p.add_argument("--cohort", required=True)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("-o", "--out", required=True)

    p = add("evaluate", cmd_evaluate, "run the train/test coverage protocol")
    p.add_argument("--controls", required=True)
    p.add_argument("--design", choices=DESIGNS, default=DESIGNS[0])
    p.add_argument("--model", choices=MODELS, default="constant")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--folds", type=int, default=None,
                   help="rotate families through this many test folds")
    p.add_argument("--figures", action="store_true", help="also render SVG figures")
    _add_mcmc(p)
    p.add_argument("--out-dir", required=True)

    p = add("diagnostics", cmd_diagnostics, "write convergence diagnostics for a draws file")
    p.add_argument("--draws", required=True)
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--out-dir", required=True)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                conf = json.load(fh)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            parser.error(f"invalid JSON config {args.config}: {exc}")
        parser.subcommands[args.command].set_defaults(**{k.replace("-", "_"): v for k, v in conf.items()})
        args = parser.parse_args(argv)
    if getattr(args, "design", None) == NEG_ONLY and getattr(args, "model", None) == "linear":
        parser.error("--model linear cannot be combined with --design neg_only_train")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except BiasCalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
