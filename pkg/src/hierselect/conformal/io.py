"""CSV serialisation of e-value tables."""

from __future__ import annotations

import csv
from typing import Optional, Sequence

import numpy as np

from .core import EValueTable

COLUMNS = ("group_id", "unit_index", "value", "kind", "threshold_plus", "threshold_minus")


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def write_table_csv(table: EValueTable, path, group_ids: Optional[Sequence[str]] = None) -> None:
    """One row per unit, then one row per group entry (empty ``unit_index``)."""
    ids = list(group_ids) if group_ids is not None else [str(j) for j in range(table.n_groups)]
    tp = table.threshold_plus
    tm = table.threshold_minus
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for j, vals in enumerate(table.values):
            tpj = None if tp is None else tp[j]
            tmj = None if tm is None else tm[j]
            for i, v in enumerate(vals):
                w.writerow([ids[j], i, _num(v), table.kind, _num(tpj), _num(tmj)])
        if table.group_values is not None:
            gt = table.group_threshold
            for j, v in enumerate(table.group_values):
                w.writerow([ids[j], "", _num(v), table.kind, _num(None if gt is None else gt[j]), ""])
