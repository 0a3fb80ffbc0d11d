import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierselect.conformal import (
    SubsampleDraw,
    draw_subsample,
    ite_hierarchical_evalues,
    ite_pvalues,
    ite_subsampling_evalues,
    subsampling_evalues,
)
from hierselect.data import Group, HierarchicalDataset, Role
from hierselect.errors import GuardError, SchemaError
from hierselect.scoring import IteScores, ScoreFunction, ScoreSet, compute_ite_scores, residual_score


def test_pvalue_direct():
    sc = IteScores.from_arrays([[-1.0], [0.0], [2.0]], [[1.0]])
    assert ite_pvalues(sc, draw_subsample([1, 1, 1], 0)).flat()[0] == 0.75


def test_pvalue_minimum():
    sc = IteScores.from_arrays([[1.0], [2.0]], [[-3.0]])
    assert ite_pvalues(sc, draw_subsample([1, 1], 0)).flat()[0] == 1 / 3


def test_denominator_one_when_treated_scores_large():
    sc = IteScores.from_arrays([[50.0], [60.0]], [[-1.0], [-2.0]])
    t = ite_subsampling_evalues(sc, draw_subsample([1, 1], 0), 0.9)
    for j, v in enumerate(t.values):
        assert t.threshold_plus[j] <= 50.0
        assert v[0] in (0.0, 3.0)


def test_equals_subsampling_with_all_nulls():
    # no null masking: same as the ordinary construction with every unit null
    rng = np.random.default_rng(0)
    for _ in range(50):
        tr = [rng.normal(size=rng.integers(1, 4)) for _ in range(5)]
        co = [rng.normal(size=rng.integers(1, 4)) for _ in range(3)]
        d = draw_subsample([len(v) for v in tr], rng)
        a = ite_subsampling_evalues(IteScores.from_arrays(tr, co), d, 0.7)
        b = subsampling_evalues(
            ScoreSet.from_arrays(tr, null=[np.ones(len(v), bool) for v in tr]), ScoreSet.from_arrays(co), d, 0.7
        )
        for x, y in zip(a.values, b.values):
            np.testing.assert_array_equal(x, y)


def test_hierarchical_single_singleton_group():
    sc = IteScores.from_arrays([[0.0]], [[-1.0], [1.0]])
    t = ite_hierarchical_evalues(sc, 0.9)
    assert np.all(t.threshold_plus <= t.threshold_minus)
    t.check()


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
@settings(max_examples=100, deadline=None)
def test_hierarchical_threshold_order(seed, at):
    rng = np.random.default_rng(seed)
    tr = [rng.normal(size=rng.integers(1, 5)) for _ in range(rng.integers(1, 6))]
    co = [rng.normal(size=rng.integers(1, 5)) for _ in range(rng.integers(1, 4))]
    t = ite_hierarchical_evalues(IteScores.from_arrays(tr, co), at)
    assert np.all(t.threshold_plus <= t.threshold_minus)


def test_non_monotone_score_guard():
    sc = IteScores.from_arrays([[0.0]], [[0.0]], monotone=False)
    with pytest.raises(GuardError):
        ite_subsampling_evalues(sc, draw_subsample([1], 0), 0.5)
    with pytest.raises(GuardError):
        ite_pvalues(sc, draw_subsample([1], 0))
    with pytest.raises(GuardError):
        ite_hierarchical_evalues(sc, 0.5)


def _ite_data(rng, K=6, M=3, shift=0.0):
    cal = tuple(Group(x=rng.normal(size=(3, 1)), y=rng.normal(size=3), treated=True) for _ in range(K))
    test = tuple(Group(x=rng.normal(size=(2, 1)), y=rng.normal(size=2), treated=False) for _ in range(M))
    return HierarchicalDataset(cal, Role.CALIBRATION, 1), HierarchicalDataset(test, Role.TEST, 1)


def test_general_cutoff_equals_shifted_outcomes():
    mu = lambda g, x: np.asarray(x)[:, 0]
    s = residual_score(mu)
    rng = np.random.default_rng(4)
    for _ in range(30):
        cal, test = _ite_data(rng)
        c = float(rng.normal())
        a = compute_ite_scores(cal, test, s, shift=c)
        shifted = HierarchicalDataset(
            tuple(Group(x=g.x, y=g.y + c, treated=False) for g in test.groups), Role.TEST, 1
        )
        b = compute_ite_scores(cal, shifted, s)
        d = draw_subsample([3] * 6, rng)
        for x, y in zip(ite_subsampling_evalues(a, d, 0.6).values, ite_subsampling_evalues(b, d, 0.6).values):
            np.testing.assert_array_equal(x, y)


def test_mixed_treatment_rejected():
    rng = np.random.default_rng(0)
    cal, test = _ite_data(rng)
    bad = HierarchicalDataset(cal.groups[:-1] + (Group(x=np.zeros((1, 1)), y=[0.0], treated=False),),
                              Role.CALIBRATION, 1)
    with pytest.raises(SchemaError):
        compute_ite_scores(bad, test, residual_score(lambda g, x: np.zeros(len(x))))


def test_compute_scores_guard():
    rng = np.random.default_rng(0)
    cal, test = _ite_data(rng)
    s = ScoreFunction(lambda g, x, v: np.abs(v), monotone=False)
    with pytest.raises(GuardError):
        compute_ite_scores(cal, test, s)
