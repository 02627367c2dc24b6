import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biascal import CalibratedInterval, ValidationError, coverage, emit_figures, rmse, run_protocol
from biascal.bayes import McmcConfig
from biascal.evaluation import NEG_ONLY, NEG_POS, CoverageReport
from biascal.synthesis import SimulationSpec, simulate_control_universe

GOLDEN = Path(__file__).parent / "golden"
FAST = McmcConfig(chains=2, burn_in=300, samples=500, seed=1)


def _ci(lo, hi):
    return CalibratedInterval(lo, hi, 0.95, "test")


def test_infinite_intervals_cover_everything():
    pairs = [(_ci(-1e300, 1e300), t) for t in (1.0, 1.5, 2.0, 4.0) for _ in range(5)]
    rep = coverage(pairs)
    assert all(v == 1.0 for v in rep.coverage.values())


def test_945_of_1000():
    pairs = [(_ci(-0.1, 0.1) if i < 945 else _ci(0.2, 0.3), 1.0) for i in range(1000)]
    assert coverage(pairs).coverage[1.0] == 0.945


def test_endpoint_touching_counts_as_covered():
    t = math.log(2.0)
    rep = coverage([(_ci(t, t + 1), 2.0), (_ci(t - 1, t), 2.0)])
    assert rep.coverage[2.0] == 1.0


def test_coverage_rejects_unlabelled_and_empty():
    with pytest.raises(ValidationError):
        coverage([(_ci(0, 1), None)])
    with pytest.raises(ValidationError):
        coverage([])


def _report(values):
    sizes = (1.0, 1.5, 2.0, 4.0)
    return CoverageReport(dict(zip(sizes, values)), {s: 100 for s in sizes})


def test_rmse_exact_arithmetic():
    assert rmse(_report((0.90, 0.95, 0.95, 0.95)), 0.95) == pytest.approx(0.025, abs=1e-12)
    assert rmse(_report((0.95,) * 4)) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_rmse_nonnegative_zero_iff_nominal(values):
    r = rmse(_report(values))
    assert r >= 0
    assert (r == 0) == all(v == 0.95 for v in values)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-2, 2), st.floats(0, 1), st.sampled_from([1.0, 1.5, 2.0, 4.0])), min_size=1, max_size=40),
    st.floats(0, 1),
)
def test_widening_never_lowers_coverage(rows, grow):
    base = [(_ci(c - w, c + w), t) for c, w, t in rows]
    wide = [(_ci(c - w - grow, c + w + grow), t) for c, w, t in rows]
    a, b = coverage(base), coverage(wide)
    assert all(b.coverage[t] >= a.coverage[t] for t in a.coverage)


def test_linear_negative_only_is_rejected():
    u = simulate_control_universe(SimulationSpec(families=10))
    with pytest.raises(ValidationError, match="constant"):
        run_protocol(u, NEG_ONLY, "linear", FAST)


def test_unknown_design_or_model():
    u = simulate_control_universe(SimulationSpec(families=10))
    with pytest.raises(ValidationError):
        run_protocol(u, "everything", "constant", FAST)
    with pytest.raises(ValidationError):
        run_protocol(u, NEG_POS, "quadratic", FAST)


@pytest.fixture(scope="module")
def unbiased_universe():
    return simulate_control_universe(SimulationSpec(families=500, se_min=0.01, se_max=0.02, seed=4))


@pytest.mark.parametrize("model", ["constant", "frequentist"])
def test_zero_bias_universe_keeps_coverage(unbiased_universe, model):
    res = run_protocol(unbiased_universe, NEG_POS, model, FAST, seed=2)
    assert res.test.families and not set(res.test.families) & set(res.plans[0].train_families)
    for rep in (res.calibrated, res.uncalibrated):
        assert all(v >= 0.93 for v in rep.coverage.values()), rep.coverage


def test_unbiased_universe_wald_coverage_near_nominal():
    u = simulate_control_universe(SimulationSpec(families=2000, seed=8))
    res = run_protocol(u, NEG_ONLY, "frequentist", seed=0, folds=5)
    assert res.uncalibrated.counts[1.0] == 2000
    assert abs(res.uncalibrated.coverage[1.0] - 0.95) <= 0.02


def test_negative_only_constant_model_runs():
    u = simulate_control_universe(SimulationSpec(families=50, bias_mean=0.2, bias_sd=0.05, seed=1))
    res = run_protocol(u, NEG_ONLY, "constant", FAST, seed=3)
    assert res.calibrated.design == NEG_ONLY
    assert res.calibrated.total == len(res.test)


def test_protocol_is_reproducible():
    u = simulate_control_universe(SimulationSpec(families=40, bias_mean=0.1, bias_sd=0.1, seed=2))
    a = run_protocol(u, NEG_POS, "linear", FAST, seed=5)
    b = run_protocol(u, NEG_POS, "linear", FAST, seed=5)
    assert [(c.lower, c.upper) for c in a.calibrated_intervals] == [(c.lower, c.upper) for c in b.calibrated_intervals]
    assert a.rmse_calibrated == b.rmse_calibrated


def _golden_run(out):
    u = simulate_control_universe(SimulationSpec(families=30, bias_mean=0.2, bias_sd=0.05, seed=11))
    results = [
        run_protocol(u, NEG_POS, "frequentist", seed=1),
        run_protocol(u, NEG_POS, "constant", McmcConfig(chains=2, burn_in=200, samples=300, seed=1), seed=1),
    ]
    return results, emit_figures(results, out, provenance="# biascal 0.1.0 subcommand=evaluate seed=1")


def test_figure_files(tmp_path):
    results, paths = _golden_run(tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["coverage.csv", "rmse.csv", "scatter_1.5.csv", "scatter_1.csv", "scatter_2.csv", "scatter_4.csv"]
    rmse_rows = (tmp_path / "rmse.csv").read_text().splitlines()
    # provenance + header + one bar per (model, method)
    assert len(rmse_rows) == 2 + 2 * len(results)
    n_test = sum(len(r.test) for r in results) // 4
    body = (tmp_path / "scatter_1.csv").read_text().splitlines()
    assert len(body) == 2 + n_test
    assert all(line.startswith("# biascal 0.1.0") for line in (p.read_text().splitlines()[0] for p in paths))


def test_golden_snapshot(tmp_path):
    _golden_run(tmp_path)
    for name in ("coverage.csv", "rmse.csv", "scatter_2.csv"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes(), name


def test_svg_rendering_is_deterministic(tmp_path):
    u = simulate_control_universe(SimulationSpec(families=20, bias_mean=0.2, bias_sd=0.05, seed=3))
    res = [run_protocol(u, NEG_POS, "frequentist", seed=0)]
    emit_figures(res, tmp_path / "a", svg=True, provenance="# biascal 0.1.0 subcommand=evaluate seed=0")
    emit_figures(res, tmp_path / "b", svg=True, provenance="# biascal 0.1.0 subcommand=evaluate seed=0")
    for name in ("scatter.svg", "rmse.svg"):
        a = (tmp_path / "a" / "figures" / name).read_bytes()
        assert a == (tmp_path / "b" / "figures" / name).read_bytes()
        assert b"biascal 0.1.0" in a


def test_emit_requires_results(tmp_path):
    with pytest.raises(ValidationError):
        emit_figures([], tmp_path)


@pytest.mark.slow
def test_default_precision_prior_is_conservative_at_small_bias_spread():
    # The default Uniform(0, 100) precision prior keeps sigma >= 0.1, twice the
    # simulated spread of 0.05, so calibrated intervals over-cover.
    u = simulate_control_universe(SimulationSpec(families=500, bias_mean=0.2, bias_sd=0.05, seed=0))
    res = run_protocol(u, NEG_POS, "constant", McmcConfig(seed=0), seed=0, folds=5)
    assert min(res.calibrated.coverage.values()) >= 0.95
    assert res.rmse_calibrated < res.rmse_uncalibrated
