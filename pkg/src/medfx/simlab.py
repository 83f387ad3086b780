"""Simulation design, Monte Carlo benchmark and (K1, K2) sensitivity grid.

Design: X ~ N(0.5 * 1, R diag(lam) R') with lam ~ U[1, 2]; A ~ Bernoulli(logistic(X'alpha))
with 5 nonzero alpha ~ U(0, 2); each row of B0, B1 has s nonzeros ~ U(0.5, 1);
beta's have k1 and gamma's k2 nonzeros ~ U(0.5, 1.5); all shocks N(0, sigma2).
Intercepts are zero.

Seeds: every random stream is a child of ``SeedSequence(master_seed)``
addressed by a fixed spawn key, so replicate r sees the same numbers no
matter how many replicates run or in which order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._parallel import pmap, resolve_threads  # noqa: F401  (re-exported)
from .data import Dataset, TrueParams
from .errors import DegenerateTreatment, MedfxError, TooManyFailures
from .pipeline import (PipelineConfig, _solve, combine, estimate_crossfit, estimate_debiased, fit_nuisance,
                       weight_problems, z_value)

MIN_GROUP = 10
N_ALPHA = 5

# spawn-key namespaces
_PARAMS, _COVARIATES, _REPLICATE = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    n: int = 500
    p: int = 50
    q: int = 50
    s: int = 5
    k1: int = 5
    k2: int = 5
    sigma2: float = 0.1
    K1: float = 2.75
    K2: float = 2.75
    reps: int = 100
    master_seed: int = 20240101
    crossfit: bool = False
    level: float = 0.95

    def __post_init__(self):
        if self.n < 1 or self.p < 1 or self.q < 1:
            raise ValueError("n, p, q must be positive")
        if not (0 <= self.s <= self.p and 0 <= self.k1 <= self.p and 0 <= self.k2 <= self.q):
            raise ValueError("sparsity counts must fit the dimensions (s <= p, k1 <= p, k2 <= q)")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.reps < 1:
            raise ValueError("reps must be positive")

    def pipeline(self, seed: int, **kw) -> PipelineConfig:
        kw = {"K1": self.K1, "K2": self.K2, "level": self.level, **kw}
        return PipelineConfig(seed=seed, **kw)


def seed_sequence(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=tuple(int(k) for k in key))


def _rng(master: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master, *key))


# -- parameters and data ---------------------------------------------------------

def random_orthonormal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal matrix (QR with the sign of R's diagonal fixed)."""
    Z = rng.standard_normal((d, d))
    Q, R = np.linalg.qr(Z)
    sgn = np.sign(np.diag(R))
    sgn[sgn == 0] = 1.0
    return Q * sgn


def _sparse_vec(d: int, k: int, lo: float, hi: float, rng) -> np.ndarray:
    v = np.zeros(d)
    idx = rng.choice(d, size=k, replace=False)
    v[idx] = rng.uniform(lo, hi, size=k)
    return v


def gen_params(cfg: SimConfig, seed: int | np.random.SeedSequence) -> TrueParams:
    rng = np.random.default_rng(seed)
    p, q = cfg.p, cfg.q
    R = random_orthonormal(p, rng)
    lam = rng.uniform(1.0, 2.0, size=p)
    Sigma = (R * lam) @ R.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    alpha = _sparse_vec(p, min(N_ALPHA, p), 0.0, 2.0, rng)
    B0 = np.vstack([_sparse_vec(p, cfg.s, 0.5, 1.0, rng) for _ in range(q)])
    B1 = np.vstack([_sparse_vec(p, cfg.s, 0.5, 1.0, rng) for _ in range(q)])
    beta0 = _sparse_vec(p, cfg.k1, 0.5, 1.5, rng)
    beta1 = _sparse_vec(p, cfg.k1, 0.5, 1.5, rng)
    gamma0 = _sparse_vec(q, cfg.k2, 0.5, 1.5, rng)
    gamma1 = _sparse_vec(q, cfg.k2, 0.5, 1.5, rng)
    sd = math.sqrt(cfg.sigma2)
    return TrueParams(alpha0=0.0, alpha1=0.0, beta0=beta0, beta1=beta1, gamma0=gamma0, gamma1=gamma1,
                      delta0=np.zeros(q), delta1=np.zeros(q), B0=B0, B1=B1, sigma_eps=sd, sigma_u=sd,
                      mu_x=np.full(p, 0.5), Sigma_x=Sigma, alpha_treat=alpha,
                      extra={"eigenvalues": lam})


def gen_covariates(params: TrueParams, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(params.Sigma_x)
    return params.mu_x + rng.standard_normal((n, params.p)) @ L.T


@dataclass(frozen=True, eq=False)
class SimSample:
    """A simulated dataset with the realized shocks of each unit's own arm."""

    dataset: Dataset
    eps: np.ndarray
    U: np.ndarray
    resampled: bool = False


def _draw(params: TrueParams, X: np.ndarray, rng: np.random.Generator):
    n = X.shape[0]
    q = params.q
    prob = 1.0 / (1.0 + np.exp(-(X @ params.alpha_treat)))
    A = (rng.uniform(size=n) < prob).astype(float)
    U = rng.standard_normal((n, q)) * params.sigma_u
    eps = rng.standard_normal(n) * params.sigma_eps
    t = A == 1
    M = np.where(t[:, None], params.delta1 + X @ params.B1.T, params.delta0 + X @ params.B0.T) + U
    Y = np.where(t, params.alpha1 + X @ params.beta1 + M @ params.gamma1,
                 params.alpha0 + X @ params.beta0 + M @ params.gamma0) + eps
    return A, M, Y, eps, U


def gen_data(params: TrueParams, cfg: SimConfig, rep_seed, X: np.ndarray | None = None) -> SimSample:
    """One replicate. With ``X`` given (the fixed design) only A, U and eps are drawn.

    A draw with fewer than 10 units in either arm is redrawn once from a child
    stream; a second failure raises DegenerateTreatment.
    """
    ss = rep_seed if isinstance(rep_seed, np.random.SeedSequence) else np.random.SeedSequence(rep_seed)
    main, retry, xs = ss.spawn(3)
    if X is None:
        X = gen_covariates(params, cfg.n, xs)
    X = np.asarray(X, dtype=float)
    for attempt, s in enumerate((main, retry)):
        A, M, Y, eps, U = _draw(params, X, np.random.default_rng(s))
        n1 = int(A.sum())
        if min(n1, A.size - n1) >= MIN_GROUP:
            return SimSample(Dataset(X, M, A, Y), eps, U, resampled=attempt > 0)
    raise DegenerateTreatment(f"treated count {n1} of {A.size}: fewer than {MIN_GROUP} in one arm after redraw")


def true_theta(params: TrueParams, x_bar) -> float:
    """``x_bar'(beta_1 + B_0' gamma_1)``, plus ``alpha_1 + delta_0' gamma_1`` (zero in the simulator)."""
    x_bar = np.asarray(x_bar, dtype=float)
    if x_bar.shape != (params.p,):
        raise ValueError(f"x_bar has shape {x_bar.shape}, expected ({params.p},)")
    return float(params.alpha1 + params.delta0 @ params.gamma1
                 + x_bar @ (params.beta1 + params.B0.T @ params.gamma1))


# -- benchmark -------------------------------------------------------------------

@dataclass(frozen=True)
class Design:
    """Fixed parameters and covariates shared by every replicate of a benchmark."""

    params: TrueParams
    X: np.ndarray
    theta0: float


def make_design(cfg: SimConfig) -> Design:
    params = gen_params(cfg, seed_sequence(cfg.master_seed, _PARAMS))
    X = gen_covariates(params, cfg.n, seed_sequence(cfg.master_seed, _COVARIATES))
    return Design(params, X, true_theta(params, X.mean(axis=0)))


def replicate_seeds(cfg: SimConfig, rep: int) -> tuple[np.random.SeedSequence, int]:
    """(data seed sequence, pipeline seed) of replicate ``rep``."""
    ss = seed_sequence(cfg.master_seed, _REPLICATE, rep)
    data_ss, pipe_ss = ss.spawn(2)
    return data_ss, int(pipe_ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class RepResult:
    rep: int
    theta_hat: float = math.nan
    theta_naive: float = math.nan
    se: float = math.nan
    escalated: bool = False
    error: str | None = None


@dataclass(frozen=True, eq=False)
class BenchmarkRow:
    config: SimConfig
    theta0: float
    rmse_debiased: float
    sd_debiased: float
    rmse_naive: float
    sd_naive: float
    reps_used: int
    failures: int
    coverage: float
    mean_se: float
    escalations: int
    K1: float
    K2: float
    results: tuple = field(default=(), repr=False)

    def as_dict(self, with_results: bool = False) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("config", "results")}
        d["config"] = asdict(self.config)
        if with_results:
            d["results"] = [asdict(r) for r in self.results]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkRow":
        # JSON null stands for NaN in the float fields
        def nan(v):
            return math.nan if v is None else v
        d = {k: nan(v) if k not in ("config", "results") else v for k, v in d.items()}
        cfg = SimConfig(**d.pop("config"))
        results = tuple(RepResult(**{k: v if k == "error" else nan(v) for k, v in r.items()})
                        for r in d.pop("results", ()))
        return cls(config=cfg, results=results, **d)


def _rmse_sd(est: np.ndarray, theta0: float) -> tuple[float, float]:
    if est.size == 0:
        return math.nan, math.nan
    rmse = math.sqrt(math.fsum((est - theta0) ** 2) / est.size)
    if est.size < 2:
        return rmse, math.nan
    mean = math.fsum(est) / est.size
    sd = math.sqrt(math.fsum((est - mean) ** 2) / (est.size - 1))
    return rmse, sd


def summarize(cfg: SimConfig, theta0: float, results, K1: float, K2: float, max_fail: float = 0.10) -> BenchmarkRow:
    results = tuple(sorted(results, key=lambda r: r.rep))
    ok = [r for r in results if r.error is None]
    failures = len(results) - len(ok)
    if failures > max_fail * len(results):
        raise TooManyFailures(f"{failures} of {len(results)} replicates failed "
                              f"(first: {next(r.error for r in results if r.error)})", failures, len(results))
    deb = np.array([r.theta_hat for r in ok])
    nai = np.array([r.theta_naive for r in ok])
    se = np.array([r.se for r in ok])
    z = z_value(cfg.level)
    cover = float(np.mean(np.abs(deb - theta0) <= z * se)) if ok else math.nan
    rd, sdd = _rmse_sd(deb, theta0)
    rn, sdn = _rmse_sd(nai, theta0)
    return BenchmarkRow(config=cfg, theta0=theta0, rmse_debiased=rd, sd_debiased=sdd, rmse_naive=rn, sd_naive=sdn,
                        reps_used=len(ok), failures=failures, coverage=cover,
                        mean_se=math.fsum(se) / se.size if se.size else math.nan,
                        escalations=sum(r.escalated for r in ok), K1=K1, K2=K2, results=results)


def sample_for(cfg: SimConfig, design: Design, rep: int) -> tuple[SimSample, int]:
    data_ss, pipe_seed = replicate_seeds(cfg, rep)
    return gen_data(design.params, cfg, data_ss, design.X), pipe_seed


def run_replicate(cfg: SimConfig, design: Design, rep: int) -> RepResult:
    try:
        sample, pipe_seed = sample_for(cfg, design, rep)
        pcfg = cfg.pipeline(pipe_seed)
        if cfg.crossfit:
            est = estimate_crossfit(sample.dataset, pcfg)
        else:
            est = estimate_debiased(sample.dataset, pcfg)
    except MedfxError as exc:
        return RepResult(rep, error=f"{type(exc).__name__}: {exc}")
    return RepResult(rep, est.theta_hat, est.theta_naive, est.se, escalated=bool(est.warnings and any(
        "escalated" in w for w in est.warnings)))


def benchmark(cfg: SimConfig, threads: int | None = 1, design: Design | None = None) -> BenchmarkRow:
    """Paired debiased / plug-in estimates over ``cfg.reps`` replicates of a fixed design.

    Results do not depend on ``threads``: each replicate has its own seeds
    and aggregation runs over replicates sorted by index.
    """
    if cfg.reps < 10:
        raise ValueError("benchmark needs reps >= 10")
    design = design or make_design(cfg)
    results = pmap(run_replicate, [(cfg, design, r) for r in range(cfg.reps)], threads)
    return summarize(cfg, design.theta0, results, cfg.K1, cfg.K2)


# -- sensitivity -----------------------------------------------------------------

def _sensitivity_replicate(cfg: SimConfig, design: Design, rep: int, grid: tuple) -> list[RepResult]:
    """One replicate for every grid cell: lasso fits once, weights once per distinct K."""
    try:
        sample, pipe_seed = sample_for(cfg, design, rep)
        base = cfg.pipeline(pipe_seed)
        nuis = fit_nuisance(sample.dataset, base)
    except MedfxError as exc:
        return [RepResult(rep, error=f"{type(exc).__name__}: {exc}") for _ in grid]
    ds = sample.dataset
    w1, w2 = {}, {}
    out = []
    for K1, K2 in grid:
        try:
            if K1 not in w1:
                pr1, _ = weight_problems(ds, nuis, K1, K2)
                w1[K1] = _solve(pr1, base)
            if K2 not in w2:
                _, pr2 = weight_problems(ds, nuis, K1, K2)
                w2[K2] = _solve(pr2, base)
            (t1, l1), (t2, l2) = w1[K1], w2[K2]
            est = combine(ds, nuis, replace(base, K1=K1, K2=K2), weights=(t1, t2))
            out.append(RepResult(rep, est.theta_hat, est.theta_naive, est.se, escalated=len(l1) > 1 or len(l2) > 1))
        except MedfxError as exc:
            out.append(RepResult(rep, error=f"{type(exc).__name__}: {exc}"))
    return out


def sensitivity(cfg: SimConfig, K_grid, threads: int | None = 1, design: Design | None = None,
                max_fail: float = 0.10) -> list[BenchmarkRow]:
    """One BenchmarkRow per (K1, K2) cell, all cells sharing design and replicate seeds.

    Raises TooManyFailures if any cell loses more than ``max_fail`` of its replicates.
    """
    grid = tuple((float(a), float(b)) for a, b in K_grid)
    if not grid:
        raise ValueError("K grid is empty")
    if cfg.crossfit:
        raise ValueError("sensitivity runs single-split estimates only")
    design = design or make_design(cfg)
    per_rep = pmap(_sensitivity_replicate, [(cfg, design, r, grid) for r in range(cfg.reps)], threads)
    rows = []
    for c, (K1, K2) in enumerate(grid):
        rows.append(summarize(replace(cfg, K1=K1, K2=K2), design.theta0, [res[c] for res in per_rep], K1, K2,
                              max_fail))
    return rows
