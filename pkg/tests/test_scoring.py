import numpy as np
import pytest

from hierselect.data import Group, HierarchicalDataset, Role
from hierselect.errors import GuardError, SchemaError
from hierselect.scoring import (
    PredictionTable,
    RidgePredictor,
    ScoreFunction,
    ScoringError,
    check_monotonicity,
    clipped_score,
    compute_scores,
    constant_threshold,
    require_monotone,
    residual_score,
    zero_predictor,
)
from hierselect.simulation import DgpConfig, generate


def _one(y):
    return HierarchicalDataset((Group(x=np.zeros((1, 1)), y=[y]),), Role.CALIBRATION, 1)


def test_residual_examples():
    s = residual_score(zero_predictor)
    assert s(None, np.zeros((1, 1)), np.array([3.0])).tolist() == [3.0]
    s1 = residual_score(lambda g, x: np.ones(len(x)))
    assert s1(None, np.zeros((1, 1)), np.array([20.0])).tolist() == [19.0]
    assert s.monotone


def test_clipped_examples():
    s = clipped_score(residual_score(zero_predictor), constant_threshold(20))
    x = np.zeros((2, 1))
    assert s(None, x, np.array([10.0, 25.0])).tolist() == [20.0, np.inf]


def test_compute_scores_examples():
    s, c = residual_score(zero_predictor), constant_threshold(20)
    sc = compute_scores(_one(25.0), s, c)
    assert (sc.C[0][0], sc.Vhat[0][0], sc.V[0][0], bool(sc.null[0][0])) == (20.0, 20.0, 25.0, False)
    sc = compute_scores(_one(15.0), s, c)
    assert bool(sc.null[0][0]) and sc.V[0][0] <= sc.Vhat[0][0]


def test_monotonicity_checks():
    xs = np.random.default_rng(0).normal(size=(100, 1))
    grid = np.arange(-5.0, 6.0)
    pairs = [(a, b) for a in grid for b in grid if a <= b]
    assert check_monotonicity(residual_score(zero_predictor), xs, pairs)
    assert not check_monotonicity(ScoreFunction(lambda g, x, v: -v), xs, [(0.0, 1.0)])
    clip = clipped_score(residual_score(lambda g, x: x[:, 0]), constant_threshold(0.5))
    assert check_monotonicity(clip, xs, pairs)
    with pytest.raises(ValueError):
        check_monotonicity(clip, xs, [])


def test_require_monotone():
    with pytest.raises(GuardError):
        require_monotone(ScoreFunction(lambda g, x, v: v, monotone=False))
    liar = ScoreFunction(lambda g, x, v: -v, monotone=True, name="liar")
    with pytest.raises(GuardError):
        require_monotone(liar, np.zeros((1, 1)))


def test_null_implies_v_below_vhat():
    ds = generate(DgpConfig(lam=3.0, c_quantile=0.5), 60, seed=5)
    mu = RidgePredictor(1.0).fit(generate(DgpConfig(lam=3.0, c_quantile=0.5), 30, seed=6))
    sc = compute_scores(ds, residual_score(mu), constant_threshold(ds_cut := DgpConfig(lam=3.0, c_quantile=0.5).cutoff))
    for v, vh, n in zip(sc.V, sc.Vhat, sc.null):
        assert np.all(v[n] <= vh[n])


def test_compute_scores_is_pure():
    ds = generate(DgpConfig(c_quantile=0.5), 20, seed=8)
    s = residual_score(lambda g, x: x.sum(axis=1))
    a = compute_scores(ds, s, constant_threshold(1.0))
    b = compute_scores(ds, s, constant_threshold(1.0))
    for u, v in zip(a.Vhat + a.V, b.Vhat + b.V):
        assert u.tobytes() == v.tobytes()


def test_shift_of_predictor_shifts_scores():
    ds = generate(DgpConfig(c_quantile=0.5), 10, seed=9)
    a = compute_scores(ds, residual_score(lambda g, x: x[:, 0]), constant_threshold(0.0))
    b = compute_scores(ds, residual_score(lambda g, x: x[:, 0] + 2.0), constant_threshold(0.0))
    for u, v in zip(a.Vhat, b.Vhat):
        np.testing.assert_allclose(u - 2.0, v)


def test_score_failure_reports_location():
    def bad(g, x, v):
        if np.any(x[:, 0] > 0.5):
            raise ValueError("nope")
        return v

    ds = HierarchicalDataset(
        (Group(x=[[0.0]], y=[0.0]), Group(x=[[0.0], [1.0]], y=[0.0, 0.0])), Role.CALIBRATION, 1
    )
    with pytest.raises(ScoringError, match="group 1.*unit 1"):
        compute_scores(ds, ScoreFunction(bad), constant_threshold(0.0))


def test_ridge_recovers_linear_signal():
    rng = np.random.default_rng(0)
    groups = []
    for _ in range(50):
        x = rng.normal(size=(5, 2))
        groups.append(Group(x=x, y=x @ [2.0, -1.0] + 3.0))
    ds = HierarchicalDataset(tuple(groups), Role.CALIBRATION, 2)
    mu = RidgePredictor(1e-8).fit(ds)
    np.testing.assert_allclose(mu(None, np.array([[1.0, 1.0]])), [4.0], atol=1e-6)


def test_prediction_table(tmp_path):
    f = tmp_path / "mu.csv"
    f.write_text("group_id,unit_index,mu\na,0,1.5\na,1,-1\n")
    tab = PredictionTable.load_csv(f)
    ds = HierarchicalDataset((Group(x=[[0.0], [0.0]], y=[2.0, 2.0], group_id="a"),), Role.CALIBRATION, 1)
    sc = compute_scores(ds, tab.residual_score(), constant_threshold(0.0))
    assert sc.V[0].tolist() == [0.5, 3.0]
    missing = HierarchicalDataset((Group(x=[[0.0]], y=[0.0], group_id="b"),), Role.CALIBRATION, 1)
    with pytest.raises(SchemaError):
        compute_scores(missing, tab.residual_score(), constant_threshold(0.0))
    f.write_text("group_id,mu\na,1\n")
    with pytest.raises(SchemaError):
        PredictionTable.load_csv(f)


def test_selection_invariant_under_common_shift():
    from conftest import random_instance
    from hierselect.conformal import (
        draw_subsample, hierarchical_evalues, subsampling_evalues, weighted_subsampling_evalues,
    )
    from hierselect.scoring import ScoreSet
    from hierselect.testing import ebh

    def shifted(sc, a):
        return ScoreSet.from_arrays([v + a for v in sc.Vhat], null=sc.null if sc.null[0] is not None else None,
                                    role=sc.role)

    rng = np.random.default_rng(77)
    for _ in range(200):
        cal, test = random_instance(rng, ties=True)
        a = float(rng.integers(-50, 50))
        d = draw_subsample(cal.sizes, rng)
        w = rng.uniform(0.5, 2, cal.n_groups)
        wt = rng.uniform(0.5, 2, test.n_groups)
        for build in (
            lambda c, t: subsampling_evalues(c, t, d, 0.5),
            lambda c, t: hierarchical_evalues(c, t, 0.5),
            lambda c, t: weighted_subsampling_evalues(c, t, d, w, wt, 0.5),
        ):
            r1 = ebh(build(cal, test), 0.3)
            r2 = ebh(build(shifted(cal, a), shifted(test, a)), 0.3)
            assert r1.rejected == r2.rejected
