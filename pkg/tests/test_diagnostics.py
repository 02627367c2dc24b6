import numpy as np
import pytest

from biascal import ValidationError
from biascal.bayes import (
    McmcConfig,
    PosteriorSamples,
    autocorrelation,
    diagnose,
    effective_sample_size,
    potential_scale_reduction,
    write_diagnostics,
)

import oracles


def _ar1(rho, n, chains, seed):
    rng = np.random.default_rng(seed)
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + np.sqrt(1 - rho**2) * rng.standard_normal(chains)
    return x


@pytest.mark.parametrize("seed", range(5))
def test_iid_chains_rhat_near_one(seed):
    x = np.random.default_rng(seed).standard_normal((4, 1000))
    r = potential_scale_reduction(x)
    assert 0.99 <= r <= 1.02
    assert r == pytest.approx(oracles.gelman_rubin_split(x), rel=1e-12)


def test_constant_chains_at_different_values_diverge():
    x = np.vstack([np.full(100, 0.0), np.full(100, 1.0)])
    assert potential_scale_reduction(x) > 1e6


def test_rhat_needs_two_chains():
    with pytest.raises(ValidationError):
        potential_scale_reduction(np.zeros((1, 10)))


def test_acf_lag_zero_is_one():
    for x in (np.random.default_rng(0).standard_normal(257), np.arange(10.0), np.full(5, 3.0)):
        assert autocorrelation(x)[0] == 1.0


def test_acf_matches_direct_sum():
    x = np.random.default_rng(1).standard_normal(300)
    xc = x - x.mean()
    direct = [np.dot(xc[: x.size - k], xc[k:]) / np.dot(xc, xc) for k in range(20)]
    assert np.allclose(autocorrelation(x, 19), direct, atol=1e-12)


def test_ess_of_iid_and_ar1():
    iid = np.random.default_rng(2).standard_normal((4, 2000))
    assert effective_sample_size(iid) == pytest.approx(8000, rel=0.15)
    rho = 0.8
    ar = _ar1(rho, 5000, 4, seed=3)
    assert effective_sample_size(ar) == pytest.approx(20000 * (1 - rho) / (1 + rho), rel=0.2)


def test_write_diagnostics_files(tmp_path):
    x = _ar1(0.5, 400, 3, seed=4)
    s = PosteriorSamples("constant", {"mu": x, "sigma2": x**2}, McmcConfig(chains=3, samples=400))
    paths = write_diagnostics(s, tmp_path, max_lag=50, provenance="# biascal 0.1.0 subcommand=diagnostics seed=0")
    names = {p.name for p in paths}
    for kind in ("trace", "hist", "ecdf", "acf"):
        assert {f"{kind}_mu.csv", f"{kind}_sigma2.csv"} <= names
    assert "summary.csv" in names
    acf = (tmp_path / "acf_mu.csv").read_text().splitlines()
    assert len(acf) == 2 + 51
    trace = (tmp_path / "trace_mu.csv").read_text().splitlines()
    assert len(trace) == 2 + 1200


def test_single_chain_has_notice():
    x = np.random.default_rng(5).standard_normal((1, 200))
    rep = diagnose(PosteriorSamples("constant", {"mu": x, "sigma2": x**2}, McmcConfig(chains=1, samples=200)))
    assert rep.rhat == {} and rep.notices
