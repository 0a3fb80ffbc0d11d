"""Subsampling conformal e-values and p-values, plus their merged variants."""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from ..errors import BudgetExceededError, ConfigError
from ..scoring import ScoreSet
from .core import (
    EValueTable,
    SubsampleDraw,
    check_level,
    draw_subsample,
    fdp_curve,
    leave_one_out_thresholds,
    mean_tables,
    stopping_threshold,
    subsampled,
)

DEFAULT_BUDGET = 10**6


def _check_pair(cal: ScoreSet, test: ScoreSet) -> None:
    if cal.n_groups == 0:
        raise ConfigError("calibration set is empty")
    if test.n_groups == 0 or test.sizes.sum() == 0:
        raise ConfigError("test set is empty")
    if any(n is None for n in cal.null):
        raise ConfigError("calibration scores lack null indicators (missing outcomes)")


def _null_calibration_scores(cal: ScoreSet, draw: SubsampleDraw) -> np.ndarray:
    vhat = subsampled(cal.Vhat, draw)
    null = subsampled(cal.null, draw).astype(bool)
    return vhat[null]


def subsampling_evalues(cal: ScoreSet, test: ScoreSet, draw: SubsampleDraw, alpha_tilde: float) -> EValueTable:
    """Subsampling conformal e-values for every test unit.

    With one unit ``i*_k`` per calibration group,

        e_{j,i} = (K+1) 1{Vhat_{j,i} < T_j} / (#{k : Vhat_{k,i*_k} < T_j, null} + 1)

    where ``T_j`` is the stopping threshold of the FDP estimate whose
    denominator counts test scores outside group ``j`` and whose multiplier
    is ``n_test / (K+1)``.
    """
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    _check_pair(cal, test)
    K = cal.n_groups
    n_test = int(test.sizes.sum())
    null_scores = _null_calibration_scores(cal, draw)
    T = leave_one_out_thresholds(null_scores, test.Vhat, n_test / (K + 1), alpha_tilde)
    sorted_null = np.sort(null_scores)
    values = []
    for j, v in enumerate(test.Vhat):
        below = np.searchsorted(sorted_null, T[j], side="left")
        values.append(np.where(v < T[j], (K + 1) / (below + 1), 0.0))
    return EValueTable(tuple(values), "evalue", threshold_plus=T, meta={"method": "subsampling"})


def subsampling_pvalues(cal: ScoreSet, test: ScoreSet, draw: SubsampleDraw) -> EValueTable:
    """``p = (#{k : Vhat_{k,i*_k} <= Vhat_{j,i}, null} + 1) / (K+1)``."""
    _check_pair(cal, test)
    K = cal.n_groups
    sorted_null = np.sort(_null_calibration_scores(cal, draw))
    values = [(np.searchsorted(sorted_null, v, side="right") + 1) / (K + 1) for v in test.Vhat]
    return EValueTable(tuple(values), "pvalue", meta={"method": "subsampling-p"})


def pbh_threshold(cal: ScoreSet, test: ScoreSet, draw: SubsampleDraw, alpha: float) -> float:
    """Threshold form of BH on the subsampling p-values.

    Same FDP estimate as the e-value threshold except that the denominator
    counts all test groups, group ``j`` included, and the level is ``alpha``.
    Units with ``Vhat < T`` are exactly those BH rejects.
    """
    alpha = check_level(alpha)
    _check_pair(cal, test)
    K = cal.n_groups
    n_test = int(test.sizes.sum())
    curve = fdp_curve(_null_calibration_scores(cal, draw), np.concatenate(test.Vhat), n_test / (K + 1))
    return stopping_threshold(curve, alpha)


def pbh_select(cal: ScoreSet, test: ScoreSet, draw: SubsampleDraw, alpha: float) -> list:
    T = pbh_threshold(cal, test, draw, alpha)
    return [v < T for v in test.Vhat]


def derandomized_evalues(
    cal: ScoreSet, test: ScoreSet, alpha_tilde: float, budget: int = DEFAULT_BUDGET
) -> EValueTable:
    """Exact average of subsampling e-values over every possible draw.

    Enumerates ``prod N_k`` draws, so refuses above ``budget``; use
    :func:`averaged_evalues` for large calibration sets.
    """
    _check_pair(cal, test)
    sizes = cal.sizes
    total = 1
    for n in sizes:
        total *= int(n)
        if total > budget:
            raise BudgetExceededError(
                f"derandomisation needs prod N_k > {budget} draws; use averaged_evalues instead"
            )
    tables = [
        subsampling_evalues(cal, test, SubsampleDraw(np.array(idx)), alpha_tilde)
        for idx in itertools.product(*(range(int(n)) for n in sizes))
    ]
    out = mean_tables(tables)
    out.meta.update(method="derandomized", n_draws=total)
    return out


def averaged_evalues(
    cal: ScoreSet, test: ScoreSet, alpha_tilde: float, r: int, seed: Optional[int] = None
) -> EValueTable:
    """Average of ``r`` subsampling tables, draw ``l`` seeded by the ``l``-th child of ``seed``."""
    if r < 1:
        raise ConfigError(f"r must be at least 1, got {r}")
    _check_pair(cal, test)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(r)
    tables = [
        subsampling_evalues(cal, test, draw_subsample(cal.sizes, np.random.default_rng(ss)), alpha_tilde)
        for ss in children
    ]
    out = mean_tables(tables)
    out.meta.update(method="averaged")
    return out
