import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from hierselect.conformal import hierarchical_evalues, hierarchical_pvalues, hierarchical_thresholds
from hierselect.errors import ConfigError, GuardError
from hierselect.scoring import ScoreSet
from hierselect.simulation.oracles import brute_hierarchical_evalues


def test_single_group_of_two_direct():
    # one test group: empty leave-one-out sum, so both thresholds are +inf
    cal = ScoreSet.from_arrays([[-1.0, 5.0]], null=[[True, False]])
    test = ScoreSet.from_arrays([[0.0, 7.0]], role="test")
    t = hierarchical_evalues(cal, test, 0.5)
    assert t.threshold_plus[0] == np.inf and t.threshold_minus[0] == np.inf
    np.testing.assert_array_equal(t.values[0], [2 / 1.5, 2 / 1.5])
    brute = brute_hierarchical_evalues(cal, test, 0.5)
    np.testing.assert_array_equal(t.values[0], brute[0])


def test_numerator_weights_are_inverse_group_sizes():
    cal = ScoreSet.from_arrays([[10.0, 11.0], [12.0]], null=[[True, True], [True]])
    test = ScoreSet.from_arrays([[-1.0], [-2.0], [-3.0]], role="test")
    t = hierarchical_evalues(cal, test, 0.9)
    # T^- = +inf here, so every null counts with weight 1/N_k: 1/2 + 1/2 + 1
    assert np.all(t.threshold_minus == np.inf)
    for j, v in enumerate(t.values):
        assert v[0] == (3 / 3.0 if -1 - j < t.threshold_plus[j] else 0.0)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(17)
    for _ in range(150):
        cal, test = random_instance(rng, ties=rng.random() < 0.5)
        at = float(rng.uniform(0.1, 0.9))
        fast = hierarchical_evalues(cal, test, at).values
        slow = brute_hierarchical_evalues(cal, test, at)
        for f, s in zip(fast, slow):
            np.testing.assert_allclose(f, s, rtol=1e-12, atol=0)


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
@settings(max_examples=200, deadline=None)
def test_plus_threshold_below_minus(seed, at):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng, ties=seed % 2 == 0)
    t = hierarchical_evalues(cal, test, at)
    assert np.all(t.threshold_plus <= t.threshold_minus)
    t.check()


def test_singleton_groups_use_leave_one_out_multiplier():
    # with N_k = 1 the weights are 1; only the multiplier differs from subsampling
    cal = ScoreSet.from_arrays([[-1.0], [5.0]], null=[[True], [False]])
    test = ScoreSet.from_arrays([[-2.0], [-3.0]], role="test")
    a = np.array([-1.0])
    tp, tm = hierarchical_thresholds(a, np.ones(1), 2, test.Vhat, 0.7)
    # multiplier 1/3: FDP+ on t <= -1 is (0+1)/1/3 = 1/3, beyond -1 it is 2/3
    assert tp.tolist() == [np.inf, np.inf]


def test_empty_calibration():
    with pytest.raises(ConfigError):
        hierarchical_evalues(ScoreSet.from_arrays([]), ScoreSet.from_arrays([[0.0]], role="test"), 0.5)


# ------------------------------------------------------------------ p-values


def test_outcome_score_pvalue_direct():
    cal = ScoreSet.from_arrays([[0.0, 0.0], [0.0]], null=[[True, True], [True]], V=[[-1.0, 3.0], [0.0]])
    test = ScoreSet.from_arrays([[2.0]], role="test")
    p = hierarchical_pvalues(cal, test, "outcome_score")
    assert p.flat()[0] == pytest.approx(2.5 / 3, rel=1e-15)


def test_outcome_score_pvalue_minimum():
    cal = ScoreSet.from_arrays([[0.0], [0.0]], null=[[True], [True]], V=[[1.0], [2.0]])
    test = ScoreSet.from_arrays([[-5.0]], role="test")
    assert hierarchical_pvalues(cal, test).flat()[0] == 1 / 3


def test_clipped_pvalue_uses_null_threshold_scores():
    cal = ScoreSet.from_arrays([[-1.0, 0.5], [0.2]], null=[[True, False], [True]], V=[[9.0, 9.0], [9.0]])
    test = ScoreSet.from_arrays([[0.3]], role="test")
    # group 1: only -1 counts (0.5 is non-null); group 2: 0.2 counts
    p = hierarchical_pvalues(cal, test, "clipped").flat()[0]
    assert p == pytest.approx((0.5 + 1.0 + 1) / 3)


def test_outcome_variant_guards_monotonicity():
    cal = ScoreSet.from_arrays([[0.0]], null=[[True]], V=[[0.0]], monotone=False)
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(GuardError):
        hierarchical_pvalues(cal, test, "outcome_score")
    # the clipped form is monotone by construction
    hierarchical_pvalues(cal, test, "clipped")


def test_unknown_variant():
    cal = ScoreSet.from_arrays([[0.0]], null=[[True]], V=[[0.0]])
    with pytest.raises(ConfigError):
        hierarchical_pvalues(cal, ScoreSet.from_arrays([[0.0]], role="test"), "other")


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_pvalues_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng)
    hierarchical_pvalues(cal, test, "outcome_score").check()
    hierarchical_pvalues(cal, test, "clipped").check()
