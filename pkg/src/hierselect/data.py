"""Ragged hierarchical datasets: groups of (feature, outcome) units.

Group sizes are never stored separately; every consumer reads ``N_k`` from
the length of the group's feature array.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionError, RoleError, SchemaError


class Role(str, enum.Enum):
    CALIBRATION = "calibration"
    TEST = "test"


@dataclass(frozen=True)
class Unit:
    x: np.ndarray
    y: Optional[float] = None
    y_treated: Optional[float] = None
    y_control: Optional[float] = None


def _as_readonly(a, ndim: int, name: str) -> Optional[np.ndarray]:
    if a is None:
        return None
    try:
        arr = np.array(a, dtype=float)
    except ValueError as exc:  # ragged nested lists
        raise DimensionError(f"{name}: ragged array ({exc})") from None
    if arr.ndim != ndim:
        raise DimensionError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Group:
    """One group ``k``: optional group features plus ``N_k >= 1`` units.

    ``x`` has shape ``(N_k, p)``. ``y`` is the observed outcome (the realised
    potential outcome in treatment-effect workflows). ``y_treated`` and
    ``y_control`` hold both counterfactuals and are only ever populated by the
    simulator, for evaluation.
    """

    x: np.ndarray
    y: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    treated: Optional[bool] = None
    weight: Optional[float] = None
    group_id: str = ""
    y_treated: Optional[np.ndarray] = None
    y_control: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _as_readonly(self.x, 2, "x")
        object.__setattr__(self, "x", x)
        n = x.shape[0]
        if n < 1:
            raise DimensionError(f"group {self.group_id!r} has no units")
        for name in ("y", "y_treated", "y_control"):
            v = _as_readonly(getattr(self, name), 1, name)
            if v is not None and v.shape[0] != n:
                raise DimensionError(
                    f"group {self.group_id!r}: {name} has {v.shape[0]} entries for {n} units"
                )
            object.__setattr__(self, name, v)
        object.__setattr__(self, "g", _as_readonly(self.g, 1, "g"))
        if self.treated is not None:
            object.__setattr__(self, "treated", bool(self.treated))
        if self.weight is not None:
            object.__setattr__(self, "weight", float(self.weight))

    @classmethod
    def from_units(cls, units: Sequence[Unit], **kwargs) -> "Group":
        xs = [np.asarray(u.x, dtype=float) for u in units]
        if len({x.shape for x in xs}) > 1:
            raise DimensionError("units in one group have different feature dimensions")
        ys = [u.y for u in units]
        y = None if all(v is None for v in ys) else [np.nan if v is None else v for v in ys]
        return cls(x=np.vstack(xs) if xs else np.empty((0, 0)), y=y, **kwargs)

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def units(self) -> list[Unit]:
        def at(a, i):
            return None if a is None else float(a[i])

        return [
            Unit(self.x[i], at(self.y, i), at(self.y_treated, i), at(self.y_control, i))
            for i in range(self.size)
        ]

    @property
    def has_outcomes(self) -> bool:
        return self.y is not None and not np.isnan(self.y).any()


@dataclass(frozen=True)
class Violation:
    group: int
    unit: Optional[int]
    kind: str
    message: str

    def __str__(self) -> str:
        where = f"group {self.group}" + ("" if self.unit is None else f", unit {self.unit}")
        return f"{where}: [{self.kind}] {self.message}"


@dataclass(frozen=True, eq=False)
class HierarchicalDataset:
    """An ordered collection of groups sharing feature dimensions ``p`` and ``p_G``.

    The constructor validates every invariant and raises on the first
    violation; pass ``check=False`` to build a dataset that ``validate`` can
    then inspect.
    """

    groups: tuple
    role: Role
    p: int
    p_G: int = 0
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "role", Role(self.role))
        if self.check:
            problems = validate(self)
            if problems:
                first = problems[0]
                exc = {"role": RoleError, "dimension": DimensionError}.get(first.kind, SchemaError)
                raise exc(str(first))

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.groups], dtype=int)

    @property
    def n_units(self) -> int:
        return int(self.sizes.sum())

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __getitem__(self, k) -> Group:
        return self.groups[k]

    def with_role(self, role) -> "HierarchicalDataset":
        return HierarchicalDataset(self.groups, role, self.p, self.p_G)

    def subset(self, indices: Iterable[int], role=None) -> "HierarchicalDataset":
        return HierarchicalDataset(
            [self.groups[i] for i in indices], role or self.role, self.p, self.p_G
        )

    @classmethod
    def from_groups(cls, groups: Sequence[Group], role, p_G: Optional[int] = None):
        if not groups:
            raise SchemaError("cannot infer dimensions from an empty group list")
        p = groups[0].x.shape[1]
        if p_G is None:
            p_G = 0 if groups[0].g is None else groups[0].g.shape[0]
        return cls(groups, role, p, p_G)


def validate(ds: HierarchicalDataset) -> list[Violation]:
    """Return every broken invariant; empty iff ``ds`` is well formed."""
    out: list[Violation] = []
    if ds.p < 1:
        out.append(Violation(-1, None, "dimension", f"p must be positive, got {ds.p}"))
    if ds.p_G < 0:
        out.append(Violation(-1, None, "dimension", f"p_G must be nonnegative, got {ds.p_G}"))
    for k, grp in enumerate(ds.groups):
        if grp.size < 1:
            out.append(Violation(k, None, "size", "group has no units"))
        if grp.x.shape[1] != ds.p:
            for i in range(grp.size):
                out.append(
                    Violation(k, i, "dimension", f"feature vector has length {grp.x.shape[1]}, expected {ds.p}")
                )
        if grp.g is not None and grp.g.shape[0] != ds.p_G:
            out.append(
                Violation(k, None, "dimension", f"group features have length {grp.g.shape[0]}, expected {ds.p_G}")
            )
        if grp.g is None and ds.p_G > 0:
            out.append(Violation(k, None, "dimension", "group features missing"))
        if grp.weight is not None and not (np.isfinite(grp.weight) and grp.weight >= 0):
            out.append(Violation(k, None, "weight", f"invalid weight {grp.weight}"))
        if ds.role is Role.CALIBRATION:
            if grp.y is None:
                out.append(Violation(k, None, "role", "calibration group has no outcomes"))
            else:
                for i in np.flatnonzero(np.isnan(grp.y)):
                    out.append(Violation(k, int(i), "role", "calibration unit has no outcome"))
    return out


def split_groups(ds: HierarchicalDataset, n_first: int, seed: Optional[int] = None):
    """Split at group level: the first ``n_first`` groups versus the rest.

    With ``seed`` the groups are shuffled (seeded) before splitting. No group
    is ever divided between the two halves.
    """
    if not 0 <= n_first <= ds.n_groups:
        raise SchemaError(f"n_first={n_first} outside [0, {ds.n_groups}]")
    order = np.arange(ds.n_groups)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(ds.n_groups)
    first = [ds.groups[i] for i in order[:n_first]]
    rest = [ds.groups[i] for i in order[n_first:]]

    def make(groups):
        # calibration role requires outcomes; an empty half is always valid
        return HierarchicalDataset(groups, ds.role, ds.p, ds.p_G)

    return make(first), make(rest)


# --------------------------------------------------------------------- CSV I/O


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    Feature and group-feature columns default to every header starting with
    ``x_`` / ``g_`` in index order.
    """

    group_col: str = "group_id"
    feature_cols: Optional[tuple] = None
    y_col: Optional[str] = "y"
    group_feature_cols: Optional[tuple] = None
    treated_col: Optional[str] = "treated"
    weight_col: Optional[str] = "w"
    x_prefix: str = "x_"
    g_prefix: str = "g_"

    def resolve(self, header: Sequence[str]):
        def by_prefix(prefix):
            cols = [h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()]
            return tuple(sorted(cols, key=lambda h: int(h[len(prefix):])))

        feats = self.feature_cols if self.feature_cols is not None else by_prefix(self.x_prefix)
        gfeats = (
            self.group_feature_cols if self.group_feature_cols is not None else by_prefix(self.g_prefix)
        )
        missing = [c for c in (self.group_col, *feats, *gfeats) if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        if not feats:
            raise SchemaError(f"no feature columns (expected {self.x_prefix}0, {self.x_prefix}1, ...)")
        opt = {
            name: (col if col is not None and col in header else None)
            for name, col in (("y", self.y_col), ("treated", self.treated_col), ("w", self.weight_col))
        }
        return feats, gfeats, opt


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{where}: not a number: {text!r}") from None


def load_csv(
    path,
    role=Role.CALIBRATION,
    schema: Optional[CsvSchema] = None,
    min_group_size: int = 1,
) -> HierarchicalDataset:
    """Read a long-format CSV (one row per unit) into a dataset.

    Rows sharing a group id form one group, in order of first appearance;
    units keep file order. Group-level columns (``g_*``, ``treated``, ``w``)
    must be constant within a group. Groups smaller than ``min_group_size``
    are dropped.
    """
    schema = schema or CsvSchema()
    role = Role(role)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise SchemaError(f"{path}: empty file or missing header")
        feats, gfeats, opt = schema.resolve(header)
        rows: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            gid = row[schema.group_col]
            if gid is None or gid == "":
                raise SchemaError(f"{path}:{lineno}: empty group id")
            if None in row.values() or None in row:
                raise DimensionError(f"{path}:{lineno}: row length does not match header")
            rows.setdefault(gid, []).append((lineno, row))
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    groups = []
    for gid, members in rows.items():
        if len(members) < min_group_size:
            continue
        x, y = [], []
        gvals = None
        gconst = {}
        for lineno, row in members:
            where = f"{path}:{lineno}"
            vals = []
            for c in feats:
                if row[c] == "":
                    raise DimensionError(f"{where}: missing feature {c}")
                vals.append(_parse_float(row[c], where))
            x.append(vals)
            if opt["y"] is not None:
                y.append(np.nan if row[opt["y"]] == "" else _parse_float(row[opt["y"]], where))
            gv = tuple(_parse_float(row[c], where) for c in gfeats)
            if gvals is None:
                gvals = gv
            elif gv != gvals:
                raise SchemaError(f"{where}: group features vary within group {gid!r}")
            for key in ("treated", "w"):
                col = opt[key]
                if col is None:
                    continue
                val = row[col]
                if key in gconst and gconst[key] != val:
                    raise SchemaError(f"{where}: column {col!r} varies within group {gid!r}")
                gconst[key] = val
        treated = None
        if gconst.get("treated", "") != "":
            t = gconst["treated"].strip().lower()
            if t not in ("0", "1", "true", "false"):
                raise SchemaError(f"group {gid!r}: treated must be 0/1, got {t!r}")
            treated = t in ("1", "true")
        weight = None
        if gconst.get("w", "") != "":
            weight = _parse_float(gconst["w"], f"group {gid!r}")
        groups.append(
            Group(
                x=np.array(x, dtype=float),
                y=np.array(y, dtype=float) if opt["y"] is not None else None,
                g=np.array(gvals, dtype=float) if gfeats else None,
                treated=treated,
                weight=weight,
                group_id=gid,
            )
        )
    return HierarchicalDataset(groups, role, len(feats), len(gfeats))


def write_csv(ds: HierarchicalDataset, path, precision: Optional[int] = None) -> None:
    """Write ``ds`` in the :func:`load_csv` schema.

    ``precision=None`` writes the shortest round-tripping representation, so
    ``load_csv(write_csv(ds))`` reproduces ``ds`` exactly.
    """

    def fmt(v):
        if v is None or (isinstance(v, float) and np.isnan(v)):
            return ""
        return repr(float(v)) if precision is None else f"{float(v):.{precision}g}"

    has_y = any(g.y is not None for g in ds.groups)
    has_t = any(g.treated is not None for g in ds.groups)
    has_w = any(g.weight is not None for g in ds.groups)
    header = ["group_id", *(f"x_{i}" for i in range(ds.p))]
    header += ["y"] if has_y else []
    header += [f"g_{i}" for i in range(ds.p_G)]
    header += ["treated"] if has_t else []
    header += ["w"] if has_w else []
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, grp in enumerate(ds.groups):
            gid = grp.group_id or str(k)
            for i in range(grp.size):
                row = [gid, *(fmt(v) for v in grp.x[i])]
                if has_y:
                    row.append("" if grp.y is None else fmt(grp.y[i]))
                if ds.p_G:
                    row += [fmt(v) for v in grp.g]
                if has_t:
                    row.append("" if grp.treated is None else str(int(grp.treated)))
                if has_w:
                    row.append("" if grp.weight is None else fmt(grp.weight))
                w.writerow(row)


@dataclass(frozen=True)
class HypothesisId:
    """``(j, i)`` for an individual null, ``(j, None)`` for a group null.

    Indices are 0-based positions in the test dataset.
    """

    j: int
    i: Optional[int] = None

    @property
    def is_group(self) -> bool:
        return self.i is None

    def check_bounds(self, sizes: Sequence[int]) -> None:
        if not 0 <= self.j < len(sizes) or (self.i is not None and not 0 <= self.i < sizes[self.j]):
            raise IndexError(f"{self} out of bounds for group sizes {list(sizes)}")
