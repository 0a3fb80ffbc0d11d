"""Uniform boosting of e-values (U-eBH) and its randomness sources."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..scoring import ScoreSet
from .core import EValueTable


def boost_evalues(table: EValueTable, u: float) -> EValueTable:
    """Divide every entry, group entries included, by ``u`` in ``(0, 1]``."""
    u = float(u)
    if not 0.0 < u <= 1.0:
        raise ConfigError(f"boost variable must lie in (0, 1], got {u}")
    if table.kind != "evalue":
        raise ConfigError("only e-values can be boosted")
    out = table.map(lambda a: a / u)
    out.meta.update(table.meta, boost_u=u)
    return out


def external_uniform(seed: Optional[int] = None) -> float:
    """Seeded ``Unif(0, 1]`` draw."""
    return 1.0 - float(np.random.default_rng(seed).random())


def internal_uniform(cal: ScoreSet, seed: Optional[int] = None) -> tuple:
    """Super-uniform variable from a reserved calibration group.

    Group 0 is shuffled with a seeded permutation and ``U`` is the rank of
    the first shuffled unit's outcome score within the group (random
    tie-break), divided by the group size, so ``P(U <= u) <= u``. Returns
    ``(U, remaining calibration scores)``; group 0 must not be used again.
    """
    if cal.n_groups < 2:
        raise ConfigError("internal randomness needs at least two calibration groups")
    v = cal.V[0] if cal.V[0] is not None else cal.Vhat[0]
    rng = np.random.default_rng(seed)
    n = len(v)
    perm = rng.permutation(n)
    jitter = rng.random(n)
    order = np.lexsort((jitter, v))
    rank = int(np.flatnonzero(order == perm[0])[0]) + 1
    return rank / n, cal.subset(range(1, cal.n_groups))
