"""Counterfactual means E[Y^(a', M^(a))] and the natural direct / indirect effects.

NIE = E[Y^(1,M1)] - E[Y^(1,M0)], NDE = E[Y^(1,M0)] - E[Y^(0,M0)], ATE = NIE + NDE.
Each counterfactual mean is one pipeline run with the outcome regression on
arm a' and the mediator regressions on arm a.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import pmap
from .data import Dataset, SplitPlan, split
from .errors import MedfxError, TooManyFailures
from .lasso import multiresponse_fit
from .pipeline import MediationEstimate, PipelineConfig, _cell_opts, combine, fit_nuisance, z_value

ARMS = ((1, 1), (0, 0), (1, 0), (0, 1))
MAX_FAIL = 0.20


def _mediator_fit(dataset: Dataset, cfg: PipelineConfig, plan: SplitPlan, a: int):
    rows = plan.fold1[dataset.A[plan.fold1] == a]
    if rows.size < 2:
        return None  # fit_nuisance raises GroupTooSmall with the step attached
    opts = replace(cfg.lasso, seed=cfg.seed, fit_intercept=cfg.intercept)
    lam = (cfg.lambda_overrides or {}).get("B")
    return multiresponse_fit(dataset.X[rows], dataset.M[rows], _cell_opts(opts, rows.size), lam)


def counterfactual_mean(dataset: Dataset, a_outcome: int, a_mediator: int, cfg: PipelineConfig = PipelineConfig(),
                        plan: SplitPlan | None = None, mediator_fit=None) -> MediationEstimate:
    """Debiased estimate of ``E[Y^(a_outcome, M^(a_mediator))]`` (fitted intercepts included).

    ``(1, 0)`` is exactly :func:`medfx.pipeline.estimate_debiased`.
    """
    nuis = fit_nuisance(dataset, cfg, plan, a_outcome, a_mediator, mediator_fit=mediator_fit)
    return combine(dataset, nuis, cfg)


@dataclass(frozen=True)
class Effect:
    estimate: float
    se: float
    ci: tuple[float, float]


@dataclass(frozen=True, eq=False)
class BootstrapRecord:
    B: int
    level: float
    seed: int
    # replicate x effect matrices; failed replicates are absent
    replicates: dict
    means: dict
    quantile_cis: dict
    failures: int
    failure_messages: tuple[str, ...] = ()

    @property
    def used(self) -> int:
        return self.B - self.failures


@dataclass(frozen=True, eq=False)
class EffectsReport:
    ey11: MediationEstimate
    ey00: MediationEstimate
    ey10: MediationEstimate
    ey01: MediationEstimate | None
    nie: Effect
    nde: Effect
    ate: Effect
    level: float
    bootstrap: BootstrapRecord | None = None
    warnings: tuple[str, ...] = field(default=(
        "effect CIs add the component variances as if the pipeline runs were independent (heuristic)",))


def _effect(est: float, components, z: float) -> Effect:
    se = math.sqrt(sum(c.se ** 2 for c in components))
    return Effect(est, se, (est - z * se, est + z * se))


def _point_effects(ey11: float, ey10: float, ey00: float) -> tuple[float, float, float]:
    nie = ey11 - ey10
    nde = ey10 - ey00
    return nie, nde, nie + nde


def effects(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(), plan: SplitPlan | None = None,
            with_ey01: bool = True) -> EffectsReport:
    """All counterfactual means on one split, and NIE / NDE / ATE.

    ``ate`` is formed as ``nie + nde`` so the identity holds exactly; it equals
    ``ey11 - ey00`` up to one rounding.
    """
    if plan is None:
        plan, _ = split(dataset, cfg.seed)
    med = {a: _mediator_fit(dataset, cfg, plan, a) for a in (0, 1)}
    est = {}
    for a1, a0 in ARMS:
        if (a1, a0) == (0, 1) and not with_ey01:
            continue
        est[(a1, a0)] = counterfactual_mean(dataset, a1, a0, cfg, plan, mediator_fit=med[a0])
    z = z_value(cfg.level)
    e11, e00, e10 = est[(1, 1)], est[(0, 0)], est[(1, 0)]
    nie, nde, ate = _point_effects(e11.theta_hat, e10.theta_hat, e00.theta_hat)
    return EffectsReport(ey11=e11, ey00=e00, ey10=e10, ey01=est.get((0, 1)),
                         nie=_effect(nie, (e11, e10), z), nde=_effect(nde, (e10, e00), z),
                         ate=_effect(ate, (e11, e00), z), level=cfg.level)


# -- bootstrap -------------------------------------------------------------------

EFFECT_NAMES = ("ey11", "ey10", "ey00", "nie", "nde", "ate")


def bootstrap_rows(n: int, seed: int, b: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(b,)))
    return rng.integers(0, n, size=n)


def _replicate(dataset: Dataset, cfg: PipelineConfig, seed: int, b: int):
    rows = bootstrap_rows(dataset.n, seed, b)
    sub = dataset.subset(rows)
    try:
        rep = effects(sub, replace(cfg, seed=int(seed) + b + 1), with_ey01=False)
    except MedfxError as exc:
        return b, None, f"replicate {b}: {type(exc).__name__}: {exc}"
    vals = (rep.ey11.theta_hat, rep.ey10.theta_hat, rep.ey00.theta_hat, rep.nie.estimate, rep.nde.estimate,
            rep.ate.estimate)
    return b, vals, None


def quantile_ci(values, level: float) -> tuple[float, float]:
    """Equal-tailed interval whose endpoints are order statistics of ``values``."""
    v = np.sort(np.asarray(values, dtype=float))
    a = 0.5 * (1.0 - level)
    lo = np.quantile(v, a, method="inverted_cdf")
    hi = np.quantile(v, 1.0 - a, method="inverted_cdf")
    return float(lo), float(hi)


def bootstrap_effects(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(), B: int = 300,
                      level: float | None = None, threads: int | None = 1) -> BootstrapRecord:
    """Nonparametric bootstrap of the effects; replicate ``b`` resamples rows with its own seed.

    Replicates whose pipeline raises are excluded and counted; more than 20%
    failures raises TooManyFailures.
    """
    if B < 50:
        raise ValueError("bootstrap needs B >= 50")
    level = cfg.level if level is None else level
    z_value(level)
    tasks = [(dataset, cfg, cfg.seed, b) for b in range(B)]
    out = pmap(_replicate, tasks, threads)
    out.sort(key=lambda r: r[0])
    ok = [vals for _, vals, _ in out if vals is not None]
    msgs = tuple(m for _, _, m in out if m is not None)
    failures = B - len(ok)
    if failures > MAX_FAIL * B:
        raise TooManyFailures(f"{failures} of {B} bootstrap replicates failed", failures, B)
    mat = np.array(ok).reshape(len(ok), len(EFFECT_NAMES))
    reps = {name: mat[:, j] for j, name in enumerate(EFFECT_NAMES)}
    means = {name: math.fsum(v) / v.size for name, v in reps.items()}
    cis = {name: quantile_ci(v, level) for name, v in reps.items()}
    return BootstrapRecord(B=B, level=level, seed=cfg.seed, replicates=reps, means=means, quantile_cis=cis,
                           failures=failures, failure_messages=msgs)


def effects_with_bootstrap(dataset: Dataset, cfg: PipelineConfig = PipelineConfig(), B: int = 300,
                           threads: int | None = 1) -> EffectsReport:
    rep = effects(dataset, cfg)
    return replace(rep, bootstrap=bootstrap_effects(dataset, cfg, B, cfg.level, threads))
