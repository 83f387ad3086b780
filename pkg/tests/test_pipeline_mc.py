"""Monte Carlo properties of the estimator on the simulation design."""

from dataclasses import replace

import numpy as np
import pytest

from medfx.pipeline import bias_diagnostic, estimate_debiased
from medfx.simlab import SimConfig, benchmark, make_design, sample_for

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def row_1000():
    return benchmark(SimConfig(n=1000, p=50, q=50, sigma2=0.1, reps=100), threads=None)


def test_rmse_bands_n1000(row_1000):
    # reference values: debiased 0.0721 vs naive 0.4611 with 400 replicates
    assert row_1000.rmse_naive >= 0.3
    assert row_1000.rmse_debiased <= 0.15


def test_paired_dominance_n1000(row_1000):
    ok = [r for r in row_1000.results if r.error is None]
    theta0 = row_1000.theta0
    wins = np.mean([(r.theta_hat - theta0) ** 2 <= (r.theta_naive - theta0) ** 2 for r in ok])
    assert wins >= 0.8


def _scaled_bounds(cfg, reps):
    design = make_design(cfg)
    bounds, scaled_se = [], []
    for r in range(reps):
        sample, seed = sample_for(cfg, design, r)
        pc = cfg.pipeline(seed)
        est = estimate_debiased(sample.dataset, pc)
        diag = bias_diagnostic(sample.dataset, design.params, sample.eps, sample.U, pc, estimate=est)
        assert diag.holds()
        bounds.append(np.sqrt(cfg.n) * diag.bound)
        scaled_se.append(np.sqrt(cfg.n) * est.se)
    return float(np.median(bounds)), float(np.median(scaled_se))


def test_bias_bound_shrinks_and_se_stable():
    # [DERIVED] product-rate terms shrink faster than 1/sqrt(n); sqrt(n) se stays bounded away from 0 and infinity
    base = SimConfig(n=250, p=50, q=50, sigma2=0.1, reps=50)
    med = {n: _scaled_bounds(replace(base, n=n), 50) for n in (250, 1250)}
    assert med[1250][0] < med[250][0]
    ses = [v[1] for v in med.values()]
    assert min(ses) > 0 and max(ses) / min(ses) < 3


def _crossfit_vs_single(cfg):
    single = benchmark(cfg, threads=None)
    cross = benchmark(replace(cfg, crossfit=True), threads=None)
    return single.rmse_debiased, cross.rmse_debiased


def test_crossfit_not_worse_desk_scale():
    # [DERIVED] same comparison as the full-size run below at p+q=100
    single, cross = _crossfit_vs_single(SimConfig(n=1000, p=50, q=50, sigma2=0.5, reps=100))
    assert cross <= single


@pytest.mark.heavy
def test_crossfit_not_worse_full_size():
    single, cross = _crossfit_vs_single(SimConfig(n=1000, p=400, q=400, sigma2=0.5, reps=100))
    assert cross <= single
