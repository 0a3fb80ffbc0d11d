"""Group-level e-values: group-global averages and the size-matched construction."""

from __future__ import annotations

from typing import Callable, Optional, Union

import numpy as np

from ..data import HierarchicalDataset
from ..errors import ConfigError, SchemaError
from ..scoring import ScoringError
from .core import EValueTable, check_level, fdp_curve, stopping_threshold


def group_global_evalues(individual: EValueTable) -> EValueTable:
    """Attach ``e_j = mean_i e_{j,i}`` as group entries (group-global nulls)."""
    if individual.kind != "evalue":
        raise ConfigError("group-global e-values need an e-value table")
    gv = np.array([v.mean() if v.size else 0.0 for v in individual.values])
    out = individual.with_group_values(gv)
    out.meta.update(individual.meta, group="global")
    return out


def mean_prediction_group_score(mu) -> Callable:
    """``s_g(g, X, c) = c - mean(mu(g, X))``; small when the group mean is predicted above ``c``."""

    def s(g, x, c):
        return float(c) - float(np.mean(mu(g, x)))

    return s


def _cutoff(c_group, g, x) -> float:
    return float(c_group(g, x)) if callable(c_group) else float(c_group)


def _prefix(n: int, r: int, rng) -> np.ndarray:
    if rng is None:
        return np.arange(r)
    return np.sort(rng.choice(n, size=r, replace=False))


def group_general_evalues(
    calib: HierarchicalDataset,
    test: HierarchicalDataset,
    group_score: Callable,
    alpha_tilde: float,
    h: Callable = np.mean,
    c_group: Union[float, Callable] = 0.0,
    prefix_mode: str = "first_r",
    seed: Optional[int] = None,
) -> tuple:
    """Size-matched group e-values.

    For test group ``j`` of size ``r`` the comparison set is the calibration
    groups with at least ``r`` units, scored on ``r`` of their units
    (the first ``r``, or a seeded random ``r``-subset). Returns
    ``(values, thresholds, comparison_sizes)``.

        e_j = (|I| + 1) 1{Vhat_{K+j} < T_j} / (sum_{k in I} 1{Vhat_k^r < T_j, h(Y_k^r) <= c} + 1)

    ``T_j`` uses the estimate
    ``(sum_I 1{...} + 1) / (1 v #{l : Vhat_{K+l} < t}) * M / (|I| + 1)``.
    """
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    if prefix_mode not in ("first_r", "random_r"):
        raise ConfigError(f"unknown prefix mode {prefix_mode!r}")
    if test.n_groups == 0:
        raise ConfigError("test set is empty")
    rng = np.random.default_rng(seed) if prefix_mode == "random_r" else None

    def score(grp, k, rows):
        x = grp.x[rows]
        try:
            return float(group_score(grp.g, x, _cutoff(c_group, grp.g, x)))
        except (ConfigError, SchemaError):
            raise
        except Exception as exc:  # noqa: BLE001
            raise ScoringError(f"group score failed at group {k} ({grp.group_id!r}): {exc}") from exc

    test_v = np.array([score(grp, j, slice(None)) for j, grp in enumerate(test.groups)])
    cal_sizes = calib.sizes
    M = test.n_groups
    cache: dict = {}

    def comparison(r: int):
        if r not in cache:
            idx = np.flatnonzero(cal_sizes >= r)
            v, null = [], []
            for k in idx:
                grp = calib.groups[k]
                if grp.y is None:
                    raise SchemaError(f"calibration group {k} has missing outcomes")
                rows = _prefix(grp.size, r, rng)
                v.append(score(grp, k, rows))
                null.append(float(h(grp.y[rows])) <= _cutoff(c_group, grp.g, grp.x[rows]))
            v = np.array(v, dtype=float)
            cache[r] = (v[np.array(null, dtype=bool)] if v.size else v, len(idx))
        return cache[r]

    values = np.empty(M)
    T = np.empty(M)
    n_cmp = np.empty(M, dtype=int)
    for j, grp in enumerate(test.groups):
        a, n_i = comparison(grp.size)
        curve = fdp_curve(a, test_v, M / (n_i + 1))
        T[j] = stopping_threshold(curve, alpha_tilde)
        cnt = int(np.sum(a < T[j]))
        values[j] = (n_i + 1) / (cnt + 1) if test_v[j] < T[j] else 0.0
        n_cmp[j] = n_i
    return values, T, n_cmp
