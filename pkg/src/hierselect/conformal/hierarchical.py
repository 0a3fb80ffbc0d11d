"""Hierarchical conformal e-values and p-values.

Every calibration unit enters with weight ``1/N_k``, so each group counts as
one aggregated unit and no subsampling is needed.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, GuardError, InvariantError
from ..scoring import ScoreSet
from .core import EValueTable, check_level, leave_one_out_thresholds, weighted_count_below


def _unit_weights(sizes) -> list:
    return [np.full(int(n), 1.0 / n) for n in sizes]


def hierarchical_thresholds(num_scores, num_weights, n_cal_groups: int, test_scores, alpha_tilde: float):
    """``(T^+, T^-)`` per test group: FDP numerators with and without the ``+1``.

    The multiplier for group ``j`` is ``sum_{l != j} N_l / (K+1)``.
    """
    sizes = np.array([len(v) for v in test_scores])
    mult = (sizes.sum() - sizes) / (n_cal_groups + 1)
    t_plus = leave_one_out_thresholds(num_scores, test_scores, mult, alpha_tilde, num_weights, 1.0)
    t_minus = leave_one_out_thresholds(num_scores, test_scores, mult, alpha_tilde, num_weights, 0.0)
    if np.any(t_plus > t_minus):
        raise InvariantError("T^+ must not exceed T^- (the +1 numerator dominates pointwise)")
    return t_plus, t_minus


def _two_threshold_evalues(num_scores, num_weights, K, test_scores, alpha_tilde, method):
    t_plus, t_minus = hierarchical_thresholds(num_scores, num_weights, K, test_scores, alpha_tilde)
    values = []
    for j, v in enumerate(test_scores):
        denom = weighted_count_below(num_scores, num_weights, t_minus[j]) + 1.0
        values.append(np.where(v < t_plus[j], (K + 1) / denom, 0.0))
    return EValueTable(
        tuple(values), "evalue", threshold_plus=t_plus, threshold_minus=t_minus, meta={"method": method}
    )


def hierarchical_evalues(cal: ScoreSet, test: ScoreSet, alpha_tilde: float) -> EValueTable:
    """Deterministic hierarchical conformal e-values.

        e_{j,i} = (K+1) 1{Vhat_{j,i} < T_j^+}
                  / (sum_k (1/N_k) sum_i' 1{Vhat_{k,i'} < T_j^-, null} + 1)

    ``T_j^+`` and ``T_j^-`` come from the weighted FDP estimate with and
    without the ``+1``, multiplier ``sum_{l != j} N_l / (K+1)``.
    """
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    if cal.n_groups == 0:
        raise ConfigError("calibration set is empty")
    if test.n_groups == 0:
        raise ConfigError("test set is empty")
    if any(n is None for n in cal.null):
        raise ConfigError("calibration scores lack null indicators (missing outcomes)")
    weights = _unit_weights(cal.sizes)
    null = np.concatenate(cal.null).astype(bool)
    scores = np.concatenate(cal.Vhat)[null]
    w = np.concatenate(weights)[null]
    return _two_threshold_evalues(scores, w, cal.n_groups, test.Vhat, alpha_tilde, "hierarchical")


def _hier_pvalues(cal_scores, test_scores) -> EValueTable:
    K = len(cal_scores)
    values = []
    for v in test_scores:
        acc = np.zeros(len(v))
        for a in cal_scores:
            acc += (a[:, None] <= v[None, :]).sum(axis=0) / len(a)
        values.append((acc + 1.0) / (K + 1))
    return EValueTable(tuple(values), "pvalue")


def hierarchical_pvalues(cal: ScoreSet, test: ScoreSet, variant: str = "outcome_score") -> EValueTable:
    """Hierarchical conformal p-values.

    ``outcome_score`` compares the test threshold score against every
    calibration *outcome* score ``V`` (needs a monotone score). ``clipped``
    uses ``Vhat`` on null calibration units and ``+inf`` elsewhere, which is
    the same formula under the clipped score.
    """
    if cal.n_groups == 0:
        raise ConfigError("calibration set is empty")
    if variant == "outcome_score":
        if not cal.monotone:
            raise GuardError("outcome-score hierarchical p-values need a monotone score")
        if any(v is None for v in cal.V):
            raise ConfigError("calibration outcome scores are missing")
        cal_scores = cal.V
    elif variant == "clipped":
        cal_scores = [np.where(n, vh, np.inf) for vh, n in zip(cal.Vhat, cal.null)]
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    out = _hier_pvalues(cal_scores, test.Vhat)
    out.meta["method"] = f"hier-p-{variant}"
    return out
