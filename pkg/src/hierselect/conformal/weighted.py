"""Likelihood-ratio weighted subsampling e-values for group covariate shift."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, MissingWeightError
from ..scoring import ScoreSet
from .core import EValueTable, SubsampleDraw, check_level, fdp_curve, stopping_threshold, subsampled, weighted_count_below
from .subsampling import _check_pair


def _check_weights(w, n: int, what: str, allow_zero: bool) -> np.ndarray:
    if w is None:
        raise MissingWeightError(f"{what} weights are missing")
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ConfigError(f"expected {n} {what} weights, got {w.shape[0]}")
    if np.any(np.isnan(w)):
        raise MissingWeightError(f"{what} weights contain missing values")
    if np.any(~np.isfinite(w)):
        raise ConfigError(f"{what} weights must be finite")
    bad = w < 0 if allow_zero else w <= 0
    if np.any(bad):
        raise ConfigError(f"{what} weights must be {'nonnegative' if allow_zero else 'positive'}")
    return w


def weighted_subsampling_evalues(
    cal: ScoreSet, test: ScoreSet, draw: SubsampleDraw, cal_weights, test_weights, alpha_tilde: float
) -> EValueTable:
    """Weighted subsampling e-values.

    With ``p_k^j = w_k / S_j`` and ``S_j = sum_k w_k + w_{K+j}``,

        e^w_{j,i} = 1{Vhat_{j,i} < T_j^w} / (sum_k p_k^j 1{Vhat_{k,i*_k} < T_j^w, null} + p_{K+j}^j)

    ``T_j^w`` uses the weighted numerator over the leave-group-out test
    count, scaled by the total number of test units, so that constant
    weights reproduce :func:`subsampling_evalues` exactly.

    Weights are rescaled by their common maximum first (the e-values are
    invariant to this). Calibration weights may be zero (a group outside the
    shifted support); test weights must be positive.
    """
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    _check_pair(cal, test)
    wc = _check_weights(cal_weights, cal.n_groups, "calibration", allow_zero=True)
    wt = _check_weights(test_weights, test.n_groups, "test", allow_zero=False)
    scale = max(wc.max(), wt.max())
    wc, wt = wc / scale, wt / scale

    n_test = int(test.sizes.sum())
    vhat = subsampled(cal.Vhat, draw)
    null = subsampled(cal.null, draw).astype(bool)
    a, wa = vhat[null], wc[null]
    total = float(np.sum(wc))

    M = test.n_groups
    T = np.empty(M)
    values = []
    for j in range(M):
        S = total + wt[j]
        others = [test.Vhat[l] for l in range(M) if l != j]
        den = np.concatenate(others) if others else np.empty(0)
        curve = fdp_curve(a, den, n_test / S, num_weights=wa, num_offset=wt[j])
        T[j] = stopping_threshold(curve, alpha_tilde)
        denom = weighted_count_below(a, wa, T[j]) + wt[j]
        values.append(np.where(test.Vhat[j] < T[j], S / denom, 0.0))
    return EValueTable(tuple(values), "evalue", threshold_plus=T, meta={"method": "weighted"})
