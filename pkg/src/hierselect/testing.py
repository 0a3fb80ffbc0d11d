"""Multiple-testing procedures over e-/p-value tables and selection metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .conformal.boost import boost_evalues
from .conformal.core import EValueTable, check_level
from .data import HypothesisId
from .errors import ConfigError


@dataclass(frozen=True)
class RejectionSet:
    """Selected hypotheses as ragged boolean masks.

    ``units[j][i]`` flags individual hypothesis ``(j, i)``; ``groups[j]``
    flags group hypothesis ``j`` when group entries took part.
    """

    units: tuple
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(np.asarray(u, dtype=bool).reshape(-1) for u in self.units))
        if self.groups is not None:
            object.__setattr__(self, "groups", np.asarray(self.groups, dtype=bool).reshape(-1))

    @property
    def n_hypotheses(self) -> int:
        n = sum(len(u) for u in self.units)
        return n + (0 if self.groups is None else len(self.groups))

    @property
    def n_rejected(self) -> int:
        n = sum(int(u.sum()) for u in self.units)
        return n + (0 if self.groups is None else int(self.groups.sum()))

    @property
    def rejected(self) -> set:
        out = {HypothesisId(j, int(i)) for j, u in enumerate(self.units) for i in np.flatnonzero(u)}
        if self.groups is not None:
            out |= {HypothesisId(int(j)) for j in np.flatnonzero(self.groups)}
        return out

    @classmethod
    def from_flat(cls, mask, sizes, n_groups_extra: bool = False) -> "RejectionSet":
        mask = np.asarray(mask, dtype=bool)
        sizes = np.asarray(sizes, dtype=int)
        cut = np.cumsum(sizes)[:-1]
        n = int(sizes.sum())
        units = np.split(mask[:n], cut) if len(sizes) else []
        return cls(tuple(units), mask[n:] if n_groups_extra else None)

    @classmethod
    def from_masks(cls, masks) -> "RejectionSet":
        return cls(tuple(masks))

    def write_csv(self, path, group_ids: Optional[Sequence[str]] = None) -> None:
        ids = list(group_ids) if group_ids is not None else [str(j) for j in range(len(self.units))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group_id", "unit_index", "selected"])
            for j, u in enumerate(self.units):
                for i, s in enumerate(u):
                    w.writerow([ids[j], i, int(s)])
            if self.groups is not None:
                for j, s in enumerate(self.groups):
                    w.writerow([ids[j], "", int(s)])


def _entries(table: EValueTable, kind: str, name: str) -> np.ndarray:
    if table.kind != kind:
        raise ConfigError(f"{name} needs a {kind} table, got {table.kind}")
    flat = table.flat()
    if table.group_values is not None:
        flat = np.concatenate([flat, table.group_values])
    return flat


def ebh_mask(e: np.ndarray, alpha: float) -> np.ndarray:
    """e-BH on a flat vector: reject ``e >= e_(l*)``, ``l* = max{l : l e_(l) / n >= 1/alpha}``."""
    alpha = check_level(alpha)
    e = np.asarray(e, dtype=float).reshape(-1)
    n = e.size
    if n == 0:
        return np.zeros(0, dtype=bool)
    srt = np.sort(e)[::-1]
    ok = np.arange(1, n + 1) * srt * alpha >= n
    if not ok.any():
        return np.zeros(n, dtype=bool)
    cut = srt[np.flatnonzero(ok)[-1]]
    return e >= cut


def bh_mask(p: np.ndarray, alpha: float) -> np.ndarray:
    """Step-up BH: reject the ``k*`` smallest, ``k* = max{k : p_(k) <= alpha k / n}``."""
    alpha = check_level(alpha)
    p = np.asarray(p, dtype=float).reshape(-1)
    n = p.size
    out = np.zeros(n, dtype=bool)
    if n == 0:
        return out
    order = np.argsort(p, kind="stable")
    ok = p[order] <= alpha * np.arange(1, n + 1) / n
    if ok.any():
        out[order[: np.flatnonzero(ok)[-1] + 1]] = True
    return out


def ebh(table: EValueTable, alpha: float) -> RejectionSet:
    """e-BH over every entry of the table, group entries included."""
    e = _entries(table, "evalue", "e-BH")
    return RejectionSet.from_flat(ebh_mask(e, alpha), table.sizes, table.group_values is not None)


def bh(table: EValueTable, alpha: float) -> RejectionSet:
    p = _entries(table, "pvalue", "BH")
    return RejectionSet.from_flat(bh_mask(p, alpha), table.sizes, table.group_values is not None)


def u_ebh(table: EValueTable, alpha: float, u: float) -> RejectionSet:
    """e-BH on the table boosted by ``u`` in ``(0, 1]``."""
    return ebh(boost_evalues(table, u), alpha)


@dataclass(frozen=True)
class SelectionMetrics:
    fdp: float
    power: float
    fdp_individual: Optional[float] = None
    fdp_group: Optional[float] = None
    power_individual: Optional[float] = None
    power_group: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None}, sort_keys=True)


def _fdp_power(sel: np.ndarray, null: np.ndarray) -> tuple:
    n_rej = int(sel.sum())
    false_rej = int((sel & null).sum())
    n_alt = int((~null).sum())
    true_rej = n_rej - false_rej
    return false_rej / max(n_rej, 1), true_rej / max(n_alt, 1)


def metrics(rej: RejectionSet, null_units, null_groups=None) -> SelectionMetrics:
    """FDP and power with the ``0/0 = 0`` convention.

    ``null_units[j][i]`` is True when ``H_{j,i}`` holds; ``null_groups``
    must be given exactly when ``rej`` has group entries.
    """
    if len(null_units) != len(rej.units):
        raise ConfigError("truth does not cover every test group")
    nu = []
    for j, (u, t) in enumerate(zip(rej.units, null_units)):
        t = np.asarray(t, dtype=bool).reshape(-1)
        if t.shape != u.shape:
            raise ConfigError(f"truth for group {j} has {t.size} entries, expected {u.size}")
        nu.append(t)
    sel_u = np.concatenate(rej.units) if rej.units else np.zeros(0, dtype=bool)
    null_u = np.concatenate(nu) if nu else np.zeros(0, dtype=bool)
    if rej.groups is None:
        if null_groups is not None:
            raise ConfigError("group truth given but no group entries were tested")
        fdp, power = _fdp_power(sel_u, null_u)
        return SelectionMetrics(fdp, power)
    if null_groups is None:
        raise ConfigError("group entries were tested but no group truth given")
    null_g = np.asarray(null_groups, dtype=bool).reshape(-1)
    if null_g.shape != rej.groups.shape:
        raise ConfigError("group truth length mismatch")
    fdp, power = _fdp_power(np.concatenate([sel_u, rej.groups]), np.concatenate([null_u, null_g]))
    fi, pi = _fdp_power(sel_u, null_u)
    fg, pg = _fdp_power(rej.groups, null_g)
    return SelectionMetrics(fdp, power, fi, fg, pi, pg)
