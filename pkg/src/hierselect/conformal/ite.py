"""Conformal e-values and p-values for selecting large individual treatment effects.

Calibration groups are treated (``Vhat^1 = s(x, Y(1))`` observed), test
groups are controls (``Vhat^0 = s(x, Y(0) + c)``). No null indicator is
available on calibration units; every treated score enters the count.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, GuardError
from ..scoring import IteScores
from .core import EValueTable, SubsampleDraw, check_level, leave_one_out_thresholds, subsampled
from .hierarchical import _two_threshold_evalues


def _check(scores: IteScores) -> None:
    if not scores.monotone:
        raise GuardError("treatment-effect selection needs a score nondecreasing in y")
    if len(scores.treated) == 0:
        raise ConfigError("no treated calibration groups")
    if len(scores.control) == 0 or sum(len(v) for v in scores.control) == 0:
        raise ConfigError("no control test groups")


def ite_subsampling_evalues(scores: IteScores, draw: SubsampleDraw, alpha_tilde: float) -> EValueTable:
    """``e = (K+1) 1{Vhat^0 < T_j} / (#{k : Vhat^1_{k,i*_k} < T_j} + 1)``."""
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    _check(scores)
    K = len(scores.treated)
    n_test = sum(len(v) for v in scores.control)
    cal = np.sort(subsampled(scores.treated, draw))
    T = leave_one_out_thresholds(cal, scores.control, n_test / (K + 1), alpha_tilde)
    values = [
        np.where(v < T[j], (K + 1) / (np.searchsorted(cal, T[j], side="left") + 1), 0.0)
        for j, v in enumerate(scores.control)
    ]
    return EValueTable(tuple(values), "evalue", threshold_plus=T, meta={"method": "ite-subsampling"})


def ite_pvalues(scores: IteScores, draw: SubsampleDraw) -> EValueTable:
    """``p = (#{k : Vhat^0 > Vhat^1_{k,i*_k}} + 1) / (K+1)``."""
    _check(scores)
    K = len(scores.treated)
    cal = np.sort(subsampled(scores.treated, draw))
    values = [(np.searchsorted(cal, v, side="left") + 1) / (K + 1) for v in scores.control]
    return EValueTable(tuple(values), "pvalue", meta={"method": "ite-p"})


def ite_hierarchical_evalues(scores: IteScores, alpha_tilde: float) -> EValueTable:
    """Hierarchical ITE e-values: every treated unit weighted ``1/N_k``, thresholds ``T^+ <= T^-``."""
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    _check(scores)
    a = np.concatenate(scores.treated)
    w = np.concatenate([np.full(len(v), 1.0 / len(v)) for v in scores.treated])
    return _two_threshold_evalues(a, w, len(scores.treated), scores.control, alpha_tilde, "ite-hierarchical")
