import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medfx.data import Dataset, MIN_CELL, group_view, split, validate
from medfx.errors import GroupTooSmall


def make(n=10, p=3, q=2, treated=None, seed=0):
    rng = np.random.default_rng(seed)
    A = np.zeros(n)
    A[: (n // 2 if treated is None else treated)] = 1
    return Dataset(rng.normal(size=(n, p)), rng.normal(size=(n, q)), A, rng.normal(size=n))


def test_dataset_is_read_only_copy():
    X = np.zeros((4, 2))
    ds = Dataset(X, np.zeros((4, 1)), [0, 1, 0, 1], np.zeros(4))
    X[0, 0] = 5
    assert ds.X[0, 0] == 0
    with pytest.raises(ValueError):
        ds.Y[0] = 1.0
    assert (ds.n, ds.p, ds.q) == (4, 2, 1)
    assert ds.W.shape == (4, 3)


def test_validate_ok():
    assert validate(make()).ok


def test_validate_nonbinary_treatment():
    ds = make()
    A = ds.A.copy()
    A[3] = 2
    rep = validate(Dataset(ds.X, ds.M, A, ds.Y))
    assert not rep.ok
    assert any("non-binary treatment at row 3" in e for e in rep.errors)


def test_validate_nan_outcome_names_row():
    ds = make()
    Y = ds.Y.copy()
    Y[6] = np.nan
    rep = validate(Dataset(ds.X, ds.M, ds.A, Y))
    assert any("row 6" in e and "Y" in e for e in rep.errors)


def test_validate_is_total():
    rep = validate(Dataset(np.zeros((3, 2)), np.zeros((2, 1)), [0, 1], np.zeros(3)))
    assert not rep.ok
    rep = validate(Dataset(np.zeros((3, 1)), np.zeros((3, 1)), [1, 1, 1], np.zeros(3)))
    assert any("A=0" in e for e in rep.errors)


def test_split_example_sizes():
    ds = make(n=100, treated=40)
    plan, _ = split(ds, 7)
    assert plan.fold1.size == 50 and plan.fold2.size == 50
    assert ds.A[plan.fold1].sum() == 20 and ds.A[plan.fold2].sum() == 20
    again, _ = split(ds, 7)
    assert np.array_equal(plan.fold1, again.fold1) and np.array_equal(plan.fold2, again.fold2)


def test_split_too_small():
    with pytest.raises(GroupTooSmall):
        split(make(n=5, treated=1), 0)


@given(n1=st.integers(2 * MIN_CELL, 40), n0=st.integers(2 * MIN_CELL, 40), seed=st.integers(0, 2**32 - 1))
def test_split_is_stratified_partition(n1, n0, seed):
    ds = make(n=n1 + n0, treated=n1)
    plan, _ = split(ds, seed)
    both = np.sort(np.concatenate([plan.fold1, plan.fold2]))
    assert np.array_equal(both, np.arange(ds.n))
    for g, size in ((1, n1), (0, n0)):
        c1, c2 = (ds.A[plan.fold1] == g).sum(), (ds.A[plan.fold2] == g).sum()
        assert c1 - c2 in (0, 1)  # odd unit goes to fold 1
        assert c1 + c2 == size
    # row order preserved
    assert np.all(np.diff(plan.fold1) > 0) and np.all(np.diff(plan.fold2) > 0)
    swapped = plan.swapped()
    assert np.array_equal(swapped.fold1, plan.fold2)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_group_view_indices(a):
    A = np.array(a, dtype=float)
    n = A.size
    ds = Dataset(np.zeros((n, 1)), np.zeros((n, 1)), A, np.zeros(n))
    for g in (0, 1):
        assert np.array_equal(group_view(ds, g).indices, np.flatnonzero(A == g))
