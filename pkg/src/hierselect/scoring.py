"""Nonconformity scores and the score arrays every conformal construction reads.

Scores are evaluated group by group in vectorised form: a score function
receives the group features ``g`` (or ``None``), the ``(N_k, p)`` feature
block ``x`` and a length-``N_k`` vector of values ``v``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .data import Group, HierarchicalDataset, Role
from .errors import GuardError, HierSelectError, SchemaError

Predictor = Callable[[Optional[np.ndarray], np.ndarray], np.ndarray]


class ScoringError(HierSelectError):
    """A predictor or score raised while evaluating a specific unit."""

    exit_code = 4


class ScoreFunction:
    """Wraps ``fn(g, x, v) -> scores``.

    ``monotone`` asserts ``s(x, y1) <= s(x, y2)`` whenever ``y1 <= y2``;
    :func:`check_monotonicity` can probe the claim. Scores must be pure so
    they can be evaluated concurrently.
    """

    def __init__(self, fn, monotone: bool = False, name: str = "score"):
        self.fn = fn
        self.monotone = monotone
        self.name = name

    def __call__(self, g, x, v) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],))
        return np.asarray(self.fn(g, x, v), dtype=float).reshape(x.shape[0])

    def evaluate_group(self, group: Group, k: int, v) -> np.ndarray:
        return self(group.g, group.x, v)

    def __repr__(self):
        return f"ScoreFunction({self.name}, monotone={self.monotone})"


class ThresholdFunction:
    """Cutoff rule ``c(x)``, vectorised over the rows of ``x``."""

    def __init__(self, fn, name: str = "threshold"):
        self.fn = fn
        self.name = name

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.broadcast_to(np.asarray(self.fn(x), dtype=float), (x.shape[0],)).copy()


def constant_threshold(c: float) -> ThresholdFunction:
    c = float(c)
    return ThresholdFunction(lambda x: np.full(x.shape[0], c), name=f"const({c:g})")


def residual_score(mu: Predictor) -> ScoreFunction:
    """``s(g, x, v) = v - mu(g, x)``; nondecreasing in ``v``."""

    def fn(g, x, v):
        return v - np.asarray(mu(g, x), dtype=float)

    return ScoreFunction(fn, monotone=True, name="residual")


def clipped_score(s: ScoreFunction, c: ThresholdFunction) -> ScoreFunction:
    """``s(x, c(x))`` when ``v <= c(x)``, ``+inf`` otherwise.

    Monotone in ``v`` for any base score, which is what lets the clipped
    hierarchical p-value reuse the outcome-score construction.
    """

    def fn(g, x, v):
        cut = c(x)
        return np.where(v <= cut, s(g, x, cut), np.inf)

    return ScoreFunction(fn, monotone=True, name=f"clipped({s.name})")


def check_monotonicity(s: ScoreFunction, probe_xs, probe_pairs, g=None) -> bool:
    """True iff ``s(x, v1) <= s(x, v2)`` at every probe ``x`` and pair ``v1 <= v2``."""
    xs = np.atleast_2d(np.asarray(probe_xs, dtype=float))
    pairs = np.asarray(probe_pairs, dtype=float).reshape(-1, 2)
    if xs.shape[0] == 0 or pairs.shape[0] == 0:
        raise ValueError("monotonicity check needs nonempty probes")
    if np.any(pairs[:, 0] > pairs[:, 1]):
        raise ValueError("probe pairs must satisfy v1 <= v2")
    for v1, v2 in pairs:
        lo = s(g, xs, np.full(xs.shape[0], v1))
        hi = s(g, xs, np.full(xs.shape[0], v2))
        if np.any(lo > hi):
            return False
    return True


def require_monotone(s: ScoreFunction, probe_xs=None, what: str = "this method") -> None:
    """Guard used by constructions whose validity needs a monotone score."""
    if not s.monotone:
        raise GuardError(f"{what} requires a score nondecreasing in the outcome; {s!r} is not flagged monotone")
    if probe_xs is not None and len(probe_xs):
        grid = np.linspace(-10.0, 10.0, 11)
        pairs = np.column_stack([grid[:-1], grid[1:]])
        if not check_monotonicity(s, probe_xs, pairs):
            raise GuardError(f"{what}: score {s.name!r} failed the monotonicity probe")


# ------------------------------------------------------------------ predictors


class RidgePredictor:
    """Closed-form ridge regression on ``[g, x, 1]``; the intercept is unpenalised."""

    def __init__(self, penalty: float = 1.0):
        self.penalty = float(penalty)
        self.coef_: Optional[np.ndarray] = None

    @staticmethod
    def _design(g, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        parts = []
        if g is not None and np.size(g):
            parts.append(np.broadcast_to(np.asarray(g, dtype=float), (x.shape[0], np.size(g))))
        parts.append(x)
        parts.append(np.ones((x.shape[0], 1)))
        return np.hstack(parts)

    def fit(self, ds: HierarchicalDataset, target: str = "y") -> "RidgePredictor":
        rows, ys = [], []
        for grp in ds.groups:
            y = getattr(grp, target)
            if y is None:
                raise SchemaError(f"training group {grp.group_id!r} has no {target!r}")
            rows.append(self._design(grp.g, grp.x))
            ys.append(y)
        if not rows:
            raise SchemaError("cannot fit a predictor on an empty dataset")
        A = np.vstack(rows)
        b = np.concatenate(ys)
        reg = self.penalty * np.eye(A.shape[1])
        reg[-1, -1] = 0.0
        self.coef_ = np.linalg.solve(A.T @ A + reg, A.T @ b)
        return self

    def __call__(self, g, x) -> np.ndarray:
        if self.coef_ is None:
            raise RuntimeError("RidgePredictor used before fit()")
        return self._design(g, x) @ self.coef_


def zero_predictor(g, x):
    return np.zeros(np.atleast_2d(x).shape[0])


class PredictionTable:
    """Externally supplied predictions keyed by ``(group_id, unit_index)``.

    This is how arbitrary models plug in: fit anything elsewhere, write a CSV
    with columns ``group_id, unit_index, mu`` (0-based unit index).
    """

    def __init__(self, mapping: dict):
        self.mapping = mapping

    @classmethod
    def load_csv(cls, path) -> "PredictionTable":
        mapping: dict = {}
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            need = {"group_id", "unit_index", "mu"}
            if not reader.fieldnames or not need <= set(reader.fieldnames):
                raise SchemaError(f"{path}: predictions need columns {sorted(need)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    key = (row["group_id"], int(row["unit_index"]))
                    mapping.setdefault(row["group_id"], {})[key[1]] = float(row["mu"])
                except (TypeError, ValueError):
                    raise SchemaError(f"{path}:{lineno}: malformed prediction row") from None
        return cls(mapping)

    def for_group(self, group: Group) -> np.ndarray:
        per = self.mapping.get(group.group_id)
        if per is None:
            raise SchemaError(f"no predictions for group {group.group_id!r}")
        try:
            return np.array([per[i] for i in range(group.size)])
        except KeyError as exc:
            raise SchemaError(f"group {group.group_id!r}: no prediction for unit {exc.args[0]}") from None

    def residual_score(self) -> ScoreFunction:
        table = self

        class _TableResidual(ScoreFunction):
            def evaluate_group(self, group, k, v):
                return np.asarray(v, dtype=float) - table.for_group(group)

        def unkeyed(g, x, v):
            raise SchemaError("table predictions can only be evaluated on dataset groups")

        return _TableResidual(unkeyed, monotone=True, name="residual(table)")


# ------------------------------------------------------------------ score sets


@dataclass(frozen=True)
class ScoreSet:
    """Per-unit arrays aligned with a dataset's ragged shape.

    ``C`` cutoffs, ``Vhat = s(x, C)`` threshold scores, ``V = s(x, y)`` outcome
    scores and ``null = (y <= C)``. ``V`` and ``null`` are ``None`` for groups
    whose outcomes are unobserved.
    """

    C: tuple
    Vhat: tuple
    V: tuple
    null: tuple
    role: Role = Role.CALIBRATION
    monotone: bool = True

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(v) for v in self.Vhat], dtype=int)

    @property
    def n_groups(self) -> int:
        return len(self.Vhat)

    def __len__(self) -> int:
        return len(self.Vhat)

    def subset(self, indices: Sequence[int]) -> "ScoreSet":
        pick = lambda seq: tuple(seq[i] for i in indices)
        return ScoreSet(
            pick(self.C), pick(self.Vhat), pick(self.V), pick(self.null), self.role, self.monotone
        )

    @classmethod
    def from_arrays(cls, Vhat, null=None, V=None, C=None, role=Role.CALIBRATION, monotone=True) -> "ScoreSet":
        """Build directly from per-group score arrays (hand-set instances, tests)."""
        Vhat = tuple(np.asarray(v, dtype=float).reshape(-1) for v in Vhat)
        fill = lambda seq, conv: tuple(
            None if s is None else conv(s) for s in (seq if seq is not None else [None] * len(Vhat))
        )
        return cls(
            C=fill(C, lambda a: np.asarray(a, dtype=float).reshape(-1)),
            Vhat=Vhat,
            V=fill(V, lambda a: np.asarray(a, dtype=float).reshape(-1)),
            null=fill(null, lambda a: np.asarray(a, dtype=bool).reshape(-1)),
            role=Role(role),
            monotone=monotone,
        )


def _locate_failure(s: ScoreFunction, grp: Group, k: int, v, exc: Exception):
    for i in range(grp.size):
        try:
            s(grp.g, grp.x[i : i + 1], np.asarray(v)[i : i + 1])
        except Exception as inner:  # noqa: BLE001 - rethrown with coordinates
            return ScoringError(f"score failed at group {k} ({grp.group_id!r}), unit {i}: {inner}")
    return ScoringError(f"score failed at group {k} ({grp.group_id!r}): {exc}")


def compute_scores(ds: HierarchicalDataset, s: ScoreFunction, c: ThresholdFunction) -> ScoreSet:
    C, Vhat, V, null = [], [], [], []
    for k, grp in enumerate(ds.groups):
        cut = c(grp.x)
        try:
            vh = s.evaluate_group(grp, k, cut)
        except SchemaError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise _locate_failure(s, grp, k, cut, exc) from exc
        C.append(cut)
        Vhat.append(vh)
        if grp.y is not None and not np.isnan(grp.y).any():
            try:
                V.append(s.evaluate_group(grp, k, grp.y))
            except SchemaError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise _locate_failure(s, grp, k, grp.y, exc) from exc
            null.append(grp.y <= cut)
        elif ds.role is Role.CALIBRATION:
            raise SchemaError(f"calibration group {k} ({grp.group_id!r}) has missing outcomes")
        else:
            V.append(None)
            null.append(None)
    return ScoreSet(tuple(C), tuple(Vhat), tuple(V), tuple(null), ds.role, s.monotone)


@dataclass(frozen=True)
class IteScores:
    """Observed-outcome scores for treatment-effect selection.

    ``treated[k] = s(x, Y(1))`` on treated calibration groups and
    ``control[j] = s(x, Y(0) + shift)`` on control test groups.
    """

    treated: tuple
    control: tuple
    monotone: bool = True

    @classmethod
    def from_arrays(cls, treated, control, monotone=True) -> "IteScores":
        conv = lambda seq: tuple(np.asarray(a, dtype=float).reshape(-1) for a in seq)
        return cls(conv(treated), conv(control), monotone)

    def subset_treated(self, indices) -> "IteScores":
        return IteScores(tuple(self.treated[i] for i in indices), self.control, self.monotone)


def compute_ite_scores(
    calib: HierarchicalDataset, test: HierarchicalDataset, s: ScoreFunction, shift: float = 0.0
) -> IteScores:
    """Scores for testing ``Y(1) - Y(0) <= shift`` on control test units.

    Calibration groups must be treated and test groups control; ``None``
    treatment labels are taken on trust.
    """
    require_monotone(s, what="treatment-effect selection")
    for role, ds, want in (("calibration", calib, True), ("test", test, False)):
        bad = [g.group_id or str(k) for k, g in enumerate(ds.groups) if g.treated is not None and g.treated != want]
        if bad:
            raise SchemaError(
                f"{role} groups must all be {'treated' if want else 'control'}; offending groups: {bad[:5]}"
            )
    treated, control = [], []
    for k, grp in enumerate(calib.groups):
        if grp.y is None or np.isnan(grp.y).any():
            raise SchemaError(f"treated calibration group {k} has missing outcomes")
        treated.append(s.evaluate_group(grp, k, grp.y))
    for j, grp in enumerate(test.groups):
        if grp.y is None or np.isnan(grp.y).any():
            raise SchemaError(f"control test group {j} has missing observed outcomes")
        control.append(s.evaluate_group(grp, j, grp.y + shift))
    return IteScores(tuple(treated), tuple(control), s.monotone)
