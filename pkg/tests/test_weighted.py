import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from hierselect.conformal import draw_subsample, subsampling_evalues, weighted_subsampling_evalues
from hierselect.errors import ConfigError, MissingWeightError
from hierselect.scoring import ScoreSet


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0), st.floats(0.05, 0.95))
@settings(max_examples=300, deadline=None)
def test_constant_weights_reduce_exactly(seed, w, at):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng, ties=seed % 3 == 0)
    d = draw_subsample(cal.sizes, rng)
    a = weighted_subsampling_evalues(cal, test, d, np.full(cal.n_groups, w), np.full(test.n_groups, w), at)
    b = subsampling_evalues(cal, test, d, at)
    np.testing.assert_array_equal(a.threshold_plus, b.threshold_plus)
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)


def test_single_group_normalisation():
    # p_1 = 3/4 and p_test = 1/4; calibration score below every threshold
    cal = ScoreSet.from_arrays([[-10.0]], null=[[True]])
    test = ScoreSet.from_arrays([[0.0]], role="test")
    t = weighted_subsampling_evalues(cal, test, draw_subsample([1], 0), [3.0], [1.0], 0.9)
    # only one test group: empty denominator, FDP(t) = (p_1 1{-10 < t} + 1/4) * 1
    assert t.threshold_plus[0] == -10.0
    # at t = -10 the calibration score is not counted: e = 1 / (1/4) for units below -10 only
    assert t.values[0][0] == 0.0


def test_zero_calibration_weight_is_ignored():
    rng = np.random.default_rng(3)
    cal, test = random_instance(rng, K=4, M=3)
    d = draw_subsample(cal.sizes, rng)
    w = np.array([1.0, 0.0, 1.0, 1.0])
    a = weighted_subsampling_evalues(cal, test, d, w, np.ones(3), 0.7)
    a.check()


@pytest.mark.parametrize("bad", [[1.0, -1.0], [1.0, np.inf]])
def test_bad_calibration_weights(bad):
    cal = ScoreSet.from_arrays([[0.0], [1.0]], null=[[True], [True]])
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(ConfigError):
        weighted_subsampling_evalues(cal, test, draw_subsample([1, 1], 0), bad, [1.0], 0.5)


def test_test_weight_must_be_positive():
    cal = ScoreSet.from_arrays([[0.0]], null=[[True]])
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(ConfigError):
        weighted_subsampling_evalues(cal, test, draw_subsample([1], 0), [1.0], [0.0], 0.5)


def test_missing_weights():
    cal = ScoreSet.from_arrays([[0.0]], null=[[True]])
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(MissingWeightError):
        weighted_subsampling_evalues(cal, test, draw_subsample([1], 0), None, [1.0], 0.5)
    with pytest.raises(MissingWeightError):
        weighted_subsampling_evalues(cal, test, draw_subsample([1], 0), [np.nan], [1.0], 0.5)
