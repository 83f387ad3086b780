"""Observed-data and parameter containers, validation, and sample splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, GroupTooSmall


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """An iid sample of (covariates X, mediators M, treatment A, outcome Y).

    Arrays are copied and made read-only on construction. Construction does
    not check the invariants; call :func:`validate` (or :meth:`checked`).
    """

    X: np.ndarray
    M: np.ndarray
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        M = np.asarray(self.M, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if M.ndim == 1:
            M = M[:, None]
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "M", _frozen(M))
        object.__setattr__(self, "A", _frozen(np.ravel(self.A)))
        object.__setattr__(self, "Y", _frozen(np.ravel(self.Y)))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.M.shape[1]

    @property
    def W(self) -> np.ndarray:
        """Stacked covariates and mediators, shape (n, p + q)."""
        return np.hstack([self.X, self.M])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.X[rows], self.M[rows], self.A[rows], self.Y[rows])

    def treated_indices(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.A == a)

    def checked(self) -> "Dataset":
        report = validate(self)
        if not report.ok:
            raise DimensionMismatch("; ".join(report.errors))
        return self


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors


def validate(dataset: Dataset) -> ValidationReport:
    """Report dimension mismatches, non-finite entries, non-binary A and empty groups.

    Never raises.
    """
    errors: list[str] = []
    try:
        X, M, A, Y = dataset.X, dataset.M, dataset.A, dataset.Y
        n = Y.shape[0]
        for name, arr in (("X", X), ("M", M), ("A", A)):
            if arr.shape[0] != n:
                errors.append(f"{name} has {arr.shape[0]} rows but Y has {n}")
        for name, arr in (("X", X), ("M", M), ("A", A), ("Y", Y)):
            bad = ~np.isfinite(arr)
            if bad.any():
                rows = np.unique(np.nonzero(bad)[0])
                errors.append(f"non-finite {name} at row {int(rows[0])}"
                              + (f" (and {rows.size - 1} more)" if rows.size > 1 else ""))
        finite_a = A[np.isfinite(A)]
        bad_a = np.flatnonzero(np.isfinite(A) & (A != 0) & (A != 1))
        if bad_a.size:
            errors.append(f"non-binary treatment at row {int(bad_a[0])}")
        for g in (0, 1):
            if not np.any(finite_a == g):
                errors.append(f"treatment group A={g} is empty")
    except Exception as exc:  # validate is total
        errors.append(f"malformed dataset: {exc!r}")
    return ValidationReport(tuple(errors))


@dataclass(frozen=True)
class GroupView:
    indices: np.ndarray
    X_g: np.ndarray
    M_g: np.ndarray
    Y_g: np.ndarray

    @property
    def n_g(self) -> int:
        return int(self.indices.size)

    @property
    def W_g(self) -> np.ndarray:
        return np.hstack([self.X_g, self.M_g])


def group_view(dataset: Dataset, a: int) -> GroupView:
    idx = np.flatnonzero(dataset.A == a)
    return GroupView(idx, dataset.X[idx], dataset.M[idx], dataset.Y[idx])


@dataclass(frozen=True)
class SplitPlan:
    fold1: np.ndarray
    fold2: np.ndarray
    stratified: bool
    seed: int

    def swapped(self) -> "SplitPlan":
        return SplitPlan(self.fold2, self.fold1, self.stratified, self.seed)


MIN_CELL = 2


def split(dataset: Dataset, seed: int) -> tuple[SplitPlan, tuple[Dataset, Dataset]]:
    """Stratified 50/50 split by treatment.

    Within each group the rows are shuffled with ``seed``; the first
    ``ceil(n_g / 2)`` go to fold 1. Row order inside each fold follows the
    original dataset.
    """
    rng = np.random.default_rng(seed)
    f1, f2 = [], []
    for g in (0, 1):
        idx = np.flatnonzero(dataset.A == g)
        if idx.size // 2 < MIN_CELL:
            raise GroupTooSmall(
                f"group A={g} has {idx.size} rows; each fold needs at least {MIN_CELL}",
                group=g, size=int(idx.size))
        perm = rng.permutation(idx)
        half = (idx.size + 1) // 2
        f1.append(perm[:half])
        f2.append(perm[half:])
    fold1 = np.sort(np.concatenate(f1))
    fold2 = np.sort(np.concatenate(f2))
    plan = SplitPlan(_frozen(fold1, np.intp), _frozen(fold2, np.intp), True, int(seed))
    return plan, (dataset.subset(plan.fold1), dataset.subset(plan.fold2))


@dataclass(frozen=True, eq=False)
class TrueParams:
    """Coefficients of the linear structural model.

    Outcome under treatment a: ``alpha_a + X'beta_a + M'gamma_a + eps``;
    mediators under treatment a: ``delta_a + B_a X + U``.
    """

    alpha0: float
    alpha1: float
    beta0: np.ndarray
    beta1: np.ndarray
    gamma0: np.ndarray
    gamma1: np.ndarray
    delta0: np.ndarray
    delta1: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    sigma_eps: float
    sigma_u: float
    # simulation-only extras: design law and treatment model
    mu_x: np.ndarray | None = None
    Sigma_x: np.ndarray | None = None
    alpha_treat: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("beta0", "beta1", "gamma0", "gamma1", "delta0", "delta1", "B0", "B1"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        for name in ("mu_x", "Sigma_x", "alpha_treat"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))
        p, q = self.p, self.q
        shapes = {"beta0": (p,), "beta1": (p,), "gamma0": (q,), "gamma1": (q,),
                  "delta0": (q,), "delta1": (q,), "B0": (q, p), "B1": (q, p)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DimensionMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not (self.sigma_eps > 0 and self.sigma_u > 0):
            raise ValueError("noise standard deviations must be positive")

    @property
    def p(self) -> int:
        return self.beta1.shape[0]

    @property
    def q(self) -> int:
        return self.gamma1.shape[0]

    def outcome(self, a: int) -> tuple[float, np.ndarray, np.ndarray]:
        return (self.alpha1, self.beta1, self.gamma1) if a == 1 else (self.alpha0, self.beta0, self.gamma0)

    def mediator(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        return (self.delta1, self.B1) if a == 1 else (self.delta0, self.B0)

    def swapped(self) -> "TrueParams":
        """Parameters after relabelling treatment as ``1 - A``."""
        return TrueParams(self.alpha1, self.alpha0, self.beta1, self.beta0, self.gamma1, self.gamma0,
                          self.delta1, self.delta0, self.B1, self.B0, self.sigma_eps, self.sigma_u,
                          self.mu_x, self.Sigma_x,
                          None if self.alpha_treat is None else -self.alpha_treat, dict(self.extra))
