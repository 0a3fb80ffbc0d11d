"""Shared machinery: e-value tables, subsample draws and stopping thresholds.

Every estimated-FDP curve used here has the form

    F(t) = (offset + sum_c w_c 1{a_c < t}) / (1 v #{b < t}) * multiplier

with strict ``< t`` comparisons, so ``F`` is a left-continuous step function
that is constant on each interval ``(v_i, v_{i+1}]`` between consecutive
score values. Its superlevel supremum is therefore attained at a jump point
(or is +/-inf) and can be computed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError


def check_level(alpha: float, name: str = "alpha") -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {alpha}")
    return alpha


# ------------------------------------------------------------------ step FDPs


@dataclass(frozen=True)
class StepFunction:
    """Left-continuous piecewise-constant function.

    ``jumps`` are sorted, distinct, finite. ``values[0]`` is the value on
    ``(-inf, jumps[0]]``, ``values[i]`` on ``(jumps[i-1], jumps[i]]`` and
    ``values[-1]`` on ``(jumps[-1], inf)``.
    """

    jumps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        jumps = np.asarray(self.jumps, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.shape[0] != jumps.shape[0] + 1:
            raise ValueError("need exactly one more value than jump points")
        if jumps.size and (not np.all(np.isfinite(jumps)) or np.any(np.diff(jumps) <= 0)):
            raise ValueError("jump points must be finite and strictly increasing")
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        # interval index: number of jumps strictly below t
        return self.values[np.searchsorted(self.jumps, t, side="left")]


def fdp_curve(
    num_scores,
    den_scores,
    multiplier: float,
    num_weights=None,
    num_offset: float = 1.0,
    extra_jumps=None,
) -> StepFunction:
    """Tabulate ``F(t)`` from the module docstring on its constancy intervals.

    Non-finite scores never satisfy ``score < t`` for finite ``t`` and are not
    used as jump points. ``extra_jumps`` may add breakpoints; this refines the
    partition without changing the function.
    """
    a = np.asarray(num_scores, dtype=float).reshape(-1)
    b = np.asarray(den_scores, dtype=float).reshape(-1)
    w = np.ones_like(a) if num_weights is None else np.asarray(num_weights, dtype=float).reshape(-1)
    pts = [a, b] if extra_jumps is None else [a, b, np.asarray(extra_jumps, dtype=float).reshape(-1)]
    jumps = np.unique(np.concatenate(pts))
    jumps = jumps[np.isfinite(jumps)]
    evals = np.append(jumps, np.inf)

    order = np.argsort(a, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    numer = num_offset + cum[np.searchsorted(a[order], evals, side="left")]
    den = np.searchsorted(np.sort(b), evals, side="left")
    values = numer / np.maximum(den, 1) * multiplier
    return StepFunction(jumps, values)


def stopping_threshold(fdp_hat: StepFunction, alpha_tilde: float) -> float:
    """Exact ``sup{t : F(t) <= alpha_tilde}`` for a left-continuous step ``F``.

    Returns ``+inf`` when the final unbounded interval satisfies the bound,
    the right endpoint of the last satisfying interval otherwise, and
    ``-inf`` when no interval satisfies it.
    """
    alpha_tilde = check_level(alpha_tilde, "alpha_tilde")
    ok = fdp_hat.values <= alpha_tilde
    if ok[-1]:
        return np.inf
    hits = np.flatnonzero(ok[:-1])
    if hits.size == 0:
        return -np.inf
    return float(fdp_hat.jumps[hits[-1]])


def weighted_count_below(scores, weights, t: float) -> float:
    """``sum w 1{score < t}``, accumulated in sorted order like :func:`fdp_curve`."""
    a = np.asarray(scores, dtype=float).reshape(-1)
    w = np.ones_like(a) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    order = np.argsort(a, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(w[order])])
    return float(cum[np.searchsorted(a[order], t, side="left")])


def leave_one_out_thresholds(
    num_scores,
    test_scores: Sequence[np.ndarray],
    multipliers,
    alpha_tilde: float,
    num_weights=None,
    num_offsets=1.0,
) -> np.ndarray:
    """``T_j`` for every test group, the denominator skipping group ``j``."""
    M = len(test_scores)
    multipliers = np.broadcast_to(np.asarray(multipliers, dtype=float), (M,))
    offsets = np.broadcast_to(np.asarray(num_offsets, dtype=float), (M,))
    out = np.empty(M)
    for j in range(M):
        others = [test_scores[l] for l in range(M) if l != j]
        den = np.concatenate(others) if others else np.empty(0)
        curve = fdp_curve(num_scores, den, multipliers[j], num_weights, offsets[j])
        out[j] = stopping_threshold(curve, alpha_tilde)
    return out


# ------------------------------------------------------------------- e-tables


@dataclass(frozen=True)
class EValueTable:
    """Ragged table of e-values (or p-values) over test groups and units.

    ``threshold_plus[j]`` holds the single stopping threshold of group ``j``
    (``T_j^+`` for two-threshold constructions, whose ``T_j^-`` goes in
    ``threshold_minus``). ``group_values`` carries optional group-level
    entries for joint selection.
    """

    values: tuple
    kind: str = "evalue"
    group_values: Optional[np.ndarray] = None
    threshold_plus: Optional[np.ndarray] = None
    threshold_minus: Optional[np.ndarray] = None
    group_threshold: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "values", tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.values)
        )
        if self.kind not in ("evalue", "pvalue"):
            raise ValueError(f"unknown table kind {self.kind!r}")
        for name in ("group_values", "threshold_plus", "threshold_minus", "group_threshold"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(-1))

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.values], dtype=int)

    @property
    def n_groups(self) -> int:
        return len(self.values)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.values) if self.values else np.empty(0)

    def with_group_values(self, group_values, group_threshold=None) -> "EValueTable":
        gv = np.asarray(group_values, dtype=float).reshape(-1)
        if gv.shape[0] != self.n_groups:
            raise ValueError("one group value per test group required")
        return replace(self, group_values=gv, group_threshold=group_threshold)

    def map(self, fn) -> "EValueTable":
        gv = None if self.group_values is None else fn(self.group_values)
        return replace(self, values=tuple(fn(v) for v in self.values), group_values=gv)

    def check(self) -> None:
        """Raise ``InvariantError`` if entries leave the legal range."""
        from ..errors import InvariantError

        allv = self.flat() if self.group_values is None else np.concatenate([self.flat(), self.group_values])
        if self.kind == "evalue":
            if np.any(~np.isfinite(allv)) or np.any(allv < 0):
                raise InvariantError("e-values must be finite and nonnegative")
        elif np.any(allv <= 0) or np.any(allv > 1):
            raise InvariantError("p-values must lie in (0, 1]")


def mean_tables(tables: Sequence[EValueTable]) -> EValueTable:
    """Elementwise average, accumulated left to right."""
    if not tables:
        raise ValueError("nothing to average")
    acc = [np.array(v, dtype=float) for v in tables[0].values]
    for t in tables[1:]:
        for a, v in zip(acc, t.values):
            a += v
    r = float(len(tables))
    return EValueTable(tuple(a / r for a in acc), kind=tables[0].kind, meta={"r": len(tables)})


# ---------------------------------------------------------------- subsampling


@dataclass(frozen=True)
class SubsampleDraw:
    """One 0-based unit index per calibration group."""

    indices: np.ndarray
    rng_seed: Optional[int] = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)


def draw_subsample(sizes, seed=None) -> SubsampleDraw:
    """Draw ``i*_k ~ Unif{0..N_k-1}`` independently across groups.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    sizes = np.asarray(sizes, dtype=np.int64).reshape(-1)
    if sizes.size == 0:
        raise ConfigError("need at least one calibration group")
    if np.any(sizes < 1):
        raise ConfigError("group sizes must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return SubsampleDraw(rng.integers(0, sizes), seed if isinstance(seed, (int, np.integer)) else None)


def subsampled(per_group: Sequence[np.ndarray], draw: SubsampleDraw) -> np.ndarray:
    if len(per_group) != draw.indices.shape[0]:
        raise ConfigError(
            f"draw covers {draw.indices.shape[0]} groups but calibration has {len(per_group)}"
        )
    return np.array([a[i] for a, i in zip(per_group, draw.indices)])
