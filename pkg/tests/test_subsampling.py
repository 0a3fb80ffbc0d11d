import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from hierselect.conformal import (
    SubsampleDraw,
    averaged_evalues,
    derandomized_evalues,
    draw_subsample,
    mean_tables,
    pbh_select,
    pbh_threshold,
    subsampling_evalues,
    subsampling_pvalues,
)
from hierselect.errors import BudgetExceededError, ConfigError
from hierselect.scoring import ScoreSet
from hierselect.simulation.oracles import brute_subsampling_evalues, oracle_bh
from hierselect.testing import bh_mask, ebh


def test_worked_instance(worked):
    cal, test, draw = worked
    t = subsampling_evalues(cal, test, draw, 0.7)
    assert t.threshold_plus.tolist() == [-1.0, -1.0]
    assert [v.tolist() for v in t.values] == [[3.0], [3.0]]
    rej = ebh(t, 0.7)
    assert rej.n_rejected == 2


def test_worked_instance_low_level_gives_zero(worked):
    cal, test, draw = worked
    t = subsampling_evalues(cal, test, draw, 0.1)
    assert np.all(t.threshold_plus == -np.inf)
    assert t.flat().tolist() == [0.0, 0.0]


def test_worked_pbh_selects_both(worked):
    cal, test, draw = worked
    assert [m.tolist() for m in pbh_select(cal, test, draw, 0.7)] == [[True], [True]]


def test_pvalue_direct_formula():
    cal = ScoreSet.from_arrays([[-2.0], [0.0], [1.0]], null=[[True], [False], [True]])
    test = ScoreSet.from_arrays([[0.5]], role="test")
    p = subsampling_pvalues(cal, test, draw_subsample(cal.sizes, 0))
    assert p.flat()[0] == 0.5


def test_pvalue_minimal_rank():
    cal = ScoreSet.from_arrays([[1.0], [2.0], [3.0]], null=[[True]] * 3)
    test = ScoreSet.from_arrays([[-9.0]], role="test")
    assert subsampling_pvalues(cal, test, draw_subsample(cal.sizes, 0)).flat()[0] == 0.25


def test_pvalue_ties_count():
    cal = ScoreSet.from_arrays([[1.0], [1.0]], null=[[True], [True]])
    test = ScoreSet.from_arrays([[1.0]], role="test")
    assert subsampling_pvalues(cal, test, draw_subsample(cal.sizes, 0)).flat()[0] == 1.0


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(5)
    for _ in range(150):
        cal, test = random_instance(rng, ties=rng.random() < 0.5)
        draw = draw_subsample(cal.sizes, rng)
        at = float(rng.uniform(0.1, 0.9))
        fast = subsampling_evalues(cal, test, draw, at).values
        slow = brute_subsampling_evalues(cal, test, draw, at)
        for f, s in zip(fast, slow):
            np.testing.assert_array_equal(f, s)


def test_group_shares_threshold_and_value():
    rng = np.random.default_rng(8)
    for _ in range(100):
        cal, test = random_instance(rng, max_n=6)
        t = subsampling_evalues(cal, test, draw_subsample(cal.sizes, rng), 0.6)
        for j, (v, s) in enumerate(zip(t.values, test.Vhat)):
            assert np.array_equal(v > 0, s < t.threshold_plus[j])
            assert len(set(v[v > 0].tolist())) <= 1


def test_pbh_equals_bh_on_pvalues():
    rng = np.random.default_rng(21)
    for _ in range(1000):
        cal, test = random_instance(rng, ties=rng.random() < 0.3)
        draw = draw_subsample(cal.sizes, rng)
        alpha = float(rng.uniform(0.05, 0.95))
        thr = np.concatenate(pbh_select(cal, test, draw, alpha))
        p = subsampling_pvalues(cal, test, draw).flat()
        assert np.array_equal(thr, bh_mask(p, alpha))
        assert np.array_equal(thr, oracle_bh(p, alpha))


def test_pbh_empty_when_scores_large():
    cal = ScoreSet.from_arrays([[0.0], [1.0]], null=[[True], [True]])
    test = ScoreSet.from_arrays([[50.0, 60.0]], role="test")
    d = draw_subsample(cal.sizes, 0)
    assert pbh_threshold(cal, test, d, 0.3) < 50.0
    assert not np.concatenate(pbh_select(cal, test, d, 0.3)).any()


def test_empty_test_set_rejected(worked):
    cal, _, draw = worked
    with pytest.raises(ConfigError):
        subsampling_evalues(cal, ScoreSet.from_arrays([], role="test"), draw, 0.5)


def test_calibration_without_null_flags_rejected():
    cal = ScoreSet.from_arrays([[0.0]])
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(ConfigError):
        subsampling_evalues(cal, test, draw_subsample([1], 0), 0.5)


# ---------------------------------------------------------- merged e-values


def test_derandomized_singletons_equal_single_draw(worked):
    cal, test, draw = worked
    a = derandomized_evalues(cal, test, 0.7)
    b = subsampling_evalues(cal, test, draw, 0.7)
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)


def test_derandomized_two_by_two_enumeration():
    cal = ScoreSet.from_arrays([[-1.0, 2.0], [0.5, -3.0]], null=[[True, True], [True, False]])
    test = ScoreSet.from_arrays([[-2.0, 0.0], [-4.0]], role="test")
    tabs = [subsampling_evalues(cal, test, SubsampleDraw([i, k]), 0.8) for i, k in itertools.product(range(2), range(2))]
    want = [sum(t.values[j] for t in tabs) / 4 for j in range(2)]
    got = derandomized_evalues(cal, test, 0.8)
    for x, y in zip(got.values, want):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-15)
    assert got.meta["n_draws"] == 4


def test_derandomized_budget():
    cal = ScoreSet.from_arrays([np.zeros(10)] * 7, null=[np.ones(10, bool)] * 7)
    test = ScoreSet.from_arrays([[0.0]], role="test")
    with pytest.raises(BudgetExceededError, match="averaged"):
        derandomized_evalues(cal, test, 0.5)


def test_averaged_r1_equals_single_draw():
    rng = np.random.default_rng(1)
    cal, test = random_instance(rng, K=5, M=3)
    a = averaged_evalues(cal, test, 0.6, r=1, seed=99)
    child = np.random.SeedSequence(99).spawn(1)[0]
    d = draw_subsample(cal.sizes, np.random.default_rng(child))
    b = subsampling_evalues(cal, test, d, 0.6)
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)


def test_averaged_r2_is_mean_of_two():
    rng = np.random.default_rng(2)
    cal, test = random_instance(rng, K=5, M=3)
    kids = np.random.SeedSequence(7).spawn(2)
    tabs = [subsampling_evalues(cal, test, draw_subsample(cal.sizes, np.random.default_rng(k)), 0.6) for k in kids]
    got = averaged_evalues(cal, test, 0.6, r=2, seed=7)
    for x, y in zip(got.values, mean_tables(tabs).values):
        np.testing.assert_array_equal(x, y)


def test_averaged_rejects_r0(worked):
    cal, test, _ = worked
    with pytest.raises(ConfigError):
        averaged_evalues(cal, test, 0.5, r=0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_calibration_group_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng)
    draw = draw_subsample(cal.sizes, rng)
    perm = rng.permutation(cal.n_groups)
    cal_p = cal.subset(perm)
    draw_p = SubsampleDraw(draw.indices[perm])
    a = subsampling_evalues(cal, test, draw, 0.7)
    b = subsampling_evalues(cal_p, test, draw_p, 0.7)
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_within_group_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng)
    draw = draw_subsample(cal.sizes, rng)
    perms = [rng.permutation(n) for n in cal.sizes]
    # unit i of the new group is unit perm[i] of the old; transpose the index
    cal_p = ScoreSet.from_arrays([v[p] for v, p in zip(cal.Vhat, perms)], null=[n[p] for n, p in zip(cal.null, perms)])
    idx = [int(np.flatnonzero(p == i)[0]) for p, i in zip(perms, draw.indices)]
    a = subsampling_evalues(cal, test, draw, 0.7)
    b = subsampling_evalues(cal_p, test, SubsampleDraw(idx), 0.7)
    for x, y in zip(a.values, b.values):
        np.testing.assert_array_equal(x, y)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_entries_nonnegative_finite(seed):
    rng = np.random.default_rng(seed)
    cal, test = random_instance(rng)
    t = subsampling_evalues(cal, test, draw_subsample(cal.sizes, rng), float(rng.uniform(0.01, 0.99)))
    t.check()
    p = subsampling_pvalues(cal, test, draw_subsample(cal.sizes, rng))
    p.check()
