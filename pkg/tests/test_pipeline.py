import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from medfx.data import Dataset, split
from medfx.errors import GroupTooSmall
from medfx.pipeline import (PipelineConfig, bias_diagnostic, combine, estimate_both, estimate_crossfit,
                            estimate_debiased, estimate_naive, fit_nuisance, norm_ppf, z_value)
from medfx.simlab import SimConfig, make_design, sample_for

SMALL = SimConfig(n=400, p=10, q=10, s=3, k1=3, k2=3, sigma2=0.1, reps=10)


@pytest.fixture(scope="module")
def small():
    design = make_design(SMALL)
    sample, seed = sample_for(SMALL, design, 0)
    return design, sample, SMALL.pipeline(seed)


@given(st.floats(1e-12, 1 - 1e-12))
def test_norm_ppf_matches_scipy(u):
    assert abs(norm_ppf(u) - norm.ppf(u)) < 1e-8 * max(1.0, abs(norm.ppf(u)))


def test_z_value():
    assert z_value(0.95) == pytest.approx(1.959963984540054, abs=1e-12)
    assert z_value(0.9) < z_value(0.95) < z_value(0.99)
    with pytest.raises(ValueError):
        z_value(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(K1=0)
    with pytest.raises(ValueError):
        PipelineConfig(lambda_overrides={"gamma": 0.1})


def test_estimate_invariants(small):
    _, sample, cfg = small
    est = estimate_debiased(sample.dataset, cfg)
    assert est.theta_hat == est.theta_01 + est.theta_02 - est.overlap_correction
    assert est.sigma_n2 > 0 and est.se > 0
    assert est.ci[0] < est.theta_hat < est.ci[1]
    assert est.ci[1] - est.ci[0] == pytest.approx(2 * z_value(0.95) * est.se, rel=1e-12)
    assert est.sigma_n2 == pytest.approx(est.n * est.se ** 2, rel=1e-12)
    assert set(est.fits) == {"phi", "B0", "b"}
    assert est.tau1.ok and est.tau2.ok
    assert {"mediator_regressions", "outcome_regression", "projection_regression", "weights_tau1",
            "weights_tau2"} <= set(est.timings)


def test_deterministic_and_naive_paired(small):
    _, sample, cfg = small
    a = estimate_debiased(sample.dataset, cfg)
    b, naive = estimate_both(sample.dataset, cfg)
    assert a.theta_hat == b.theta_hat and a.se == b.se
    assert naive == a.theta_naive == estimate_naive(sample.dataset, cfg)


def test_naive_formula(small):
    _, sample, cfg = small
    nuis = fit_nuisance(sample.dataset, cfg)
    xb = sample.dataset.X.mean(0)
    p = sample.dataset.p
    phi, B = nuis.phi, nuis.B
    m = B.intercepts + B.B @ xb
    expected = phi.intercept + xb @ phi.coef[:p] + m @ phi.coef[p:]
    assert nuis.naive == pytest.approx(expected, rel=1e-14)


def test_naive_reduces_without_mediator_effect(small):
    _, sample, cfg = small
    nuis = fit_nuisance(sample.dataset, replace(cfg, lambda_overrides={"B": 1e6}))
    assert np.all(nuis.B.B == 0)
    xb = sample.dataset.X.mean(0)
    p = sample.dataset.p
    assert nuis.naive == pytest.approx(nuis.phi.intercept + xb @ nuis.phi.coef[:p]
                                       + nuis.B.intercepts @ nuis.phi.coef[p:], rel=1e-13)


def test_level_narrows_ci(small):
    _, sample, cfg = small
    a = estimate_debiased(sample.dataset, cfg)
    b = estimate_debiased(sample.dataset, replace(cfg, level=0.9))
    assert b.theta_hat == a.theta_hat
    assert b.ci[1] - b.ci[0] < a.ci[1] - a.ci[0]


def test_gamma_zero_gives_no_second_step(small):
    design, sample, cfg = small
    cfg0 = replace(cfg, lambda_overrides={"phi": 1e6})
    est = estimate_debiased(sample.dataset, cfg0)
    assert np.all(est.fits["phi"].coef == 0)
    # gamma_hat = 0: step-3 response is identically zero
    assert est.theta_02 == 0 and est.overlap_correction == 0
    assert est.theta_hat == est.theta_01


def test_group_too_small_has_step():
    rng = np.random.default_rng(0)
    n = 30
    A = np.zeros(n)
    A[:3] = 1
    ds = Dataset(rng.normal(size=(n, 3)), rng.normal(size=(n, 2)), A, rng.normal(size=n))
    with pytest.raises(GroupTooSmall) as info:
        estimate_debiased(ds)
    assert info.value.step == "split"


def test_crossfit_per_fold(small):
    _, sample, cfg = small
    plan, _ = split(sample.dataset, cfg.seed)
    cf = estimate_crossfit(sample.dataset, cfg, plan)
    first = estimate_debiased(sample.dataset, cfg, plan)
    second = estimate_debiased(sample.dataset, cfg, plan.swapped())
    assert cf.per_fold[0].theta_hat == first.theta_hat and cf.per_fold[1].theta_hat == second.theta_hat
    assert cf.theta_hat == pytest.approx(0.5 * (first.theta_hat + second.theta_hat), rel=1e-14)
    assert cf.se == pytest.approx(0.5 * math.hypot(first.se, second.se), rel=1e-14)
    assert cf.heuristic_se and any("heuristic" in w for w in cf.warnings)
    # order of the folds does not matter
    cf2 = estimate_crossfit(sample.dataset, cfg, plan.swapped())
    assert cf2.theta_hat == pytest.approx(cf.theta_hat, rel=1e-14)


def test_crossfit_symmetric_duplicated_data():
    # rows duplicated and the plan puts one copy in each fold: both passes see the same data
    cfg = SimConfig(n=200, p=6, q=6, s=2, k1=2, k2=2, reps=10)
    design = make_design(cfg)
    sample, seed = sample_for(cfg, design, 1)
    ds = sample.dataset
    dup = Dataset(np.vstack([ds.X, ds.X]), np.vstack([ds.M, ds.M]), np.r_[ds.A, ds.A], np.r_[ds.Y, ds.Y])
    plan, _ = split(dup, 0)
    plan = replace(plan, fold1=np.arange(200), fold2=np.arange(200, 400))
    pc = cfg.pipeline(seed)
    single = estimate_debiased(dup, pc, plan)
    cf = estimate_crossfit(dup, pc, plan)
    assert cf.theta_hat == pytest.approx(single.theta_hat, rel=1e-10)


def test_threshold_phi(small):
    _, sample, cfg = small
    est = estimate_debiased(sample.dataset, replace(cfg, threshold_phi=0.5))
    c = est.fits["phi"].coef
    assert np.all((c == 0) | (np.abs(c) >= 0.5))


def test_bias_diagnostic_holds(small):
    design, sample, cfg = small
    diag = bias_diagnostic(sample.dataset, design.params, sample.eps, sample.U, cfg)
    assert diag.holds()
    est = estimate_debiased(sample.dataset, cfg)
    assert diag.theta_hat == est.theta_hat
    assert diag.theta_true == pytest.approx(design.theta0, rel=1e-12)


def test_bias_diagnostic_exact_outcome_fit():
    # noiseless outcome, unit mediator noise, lambda ~ 0: phi_hat and gamma_hat are exact,
    # so the first and third product terms vanish and only the projection term is left
    cfg = SimConfig(n=600, p=4, q=3, s=2, k1=2, k2=2, sigma2=1.0, reps=10)
    design = make_design(cfg)
    sample, seed = sample_for(cfg, design, 0)
    ds = sample.dataset
    Y = np.empty(ds.n)
    for a in (0, 1):
        alpha, beta, gamma = design.params.outcome(a)
        r = ds.A == a
        Y[r] = alpha + ds.X[r] @ beta + ds.M[r] @ gamma
    clean = Dataset(ds.X, ds.M, ds.A, Y)
    pc = cfg.pipeline(seed, lambda_overrides={"phi": 1e-12, "B": 1e-12, "b": 1e-12})
    diag = bias_diagnostic(clean, design.params, np.zeros(ds.n), sample.U, pc)
    assert diag.delta_terms[0] < 1e-6 and diag.delta_terms[2] < 1e-6
    assert diag.holds()


def test_combine_reuses_weights(small):
    _, sample, cfg = small
    nuis = fit_nuisance(sample.dataset, cfg)
    a = combine(sample.dataset, nuis, cfg)
    b = combine(sample.dataset, nuis, cfg, weights=(a.tau1, a.tau2))
    assert a.theta_hat == b.theta_hat and a.se == b.se
