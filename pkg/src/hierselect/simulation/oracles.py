"""Brute-force test oracles and Monte Carlo validity checks.

Nothing here is used by the production paths; these are independent
re-derivations that the fast code is checked against.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ..conformal import (
    draw_subsample,
    group_general_evalues,
    group_global_evalues,
    hierarchical_evalues,
    hierarchical_pvalues,
    ite_hierarchical_evalues,
    ite_pvalues,
    ite_subsampling_evalues,
    subsampling_evalues,
    subsampling_pvalues,
    weighted_subsampling_evalues,
)
from ..conformal.core import EValueTable, leave_one_out_thresholds, subsampled
from ..data import Group, HierarchicalDataset, Role
from ..errors import ConfigError
from ..scoring import IteScores, ScoreSet
from .dgp import DgpConfig, ShiftConfig, _draw_G, _units

# ------------------------------------------------------------------- e-BH / FDP


def oracle_ebh(e, alpha: float) -> np.ndarray:
    """Largest set ``{e >= v}`` with ``|R| v >= n / alpha``, by trying every value ``v``."""
    e = np.asarray(e, dtype=float).reshape(-1)
    n = e.size
    best = np.zeros(n, dtype=bool)
    for v in np.unique(e):
        R = e >= v
        if v > 0 and R.sum() * v * alpha >= n and R.sum() > best.sum():
            best = R
    return best


def oracle_bh(p, alpha: float) -> np.ndarray:
    """Largest ``k`` with ``#{p <= alpha k / n} >= k``; reject ``p <= alpha k / n``."""
    p = np.asarray(p, dtype=float).reshape(-1)
    n = p.size
    for k in range(n, 0, -1):
        if np.sum(p <= alpha * k / n) >= k:
            return p <= alpha * k / n
    return np.zeros(n, dtype=bool)


def direct_fdp(t, num_scores, den_scores, multiplier, num_weights=None, num_offset=1.0) -> float:
    """Estimated FDP at one point, by explicit counting."""
    a = np.asarray(num_scores, dtype=float)
    w = np.ones_like(a) if num_weights is None else np.asarray(num_weights, dtype=float)
    num = num_offset + sum(wi for ai, wi in zip(a, w) if ai < t)
    den = sum(1 for b in np.asarray(den_scores, dtype=float) if b < t)
    return num / max(den, 1) * multiplier


def oracle_threshold(fdp: Callable[[float], float], points, alpha_tilde: float, grid_resolution: int = 2000):
    """Scan-based supremum of ``{t : fdp(t) <= alpha_tilde}``.

    Candidates are a dense grid over the score range, every jump point and
    the midpoints between consecutive jumps, plus one point past the maximum
    standing in for ``+inf``. Returns ``(exact, lo, hi)``: ``exact`` is the
    largest satisfying candidate including jumps (``+/-inf`` for the
    unbounded cases); ``(lo, hi)`` brackets the supremum using grid points
    only.
    """
    pts = np.unique(np.asarray(points, dtype=float))
    pts = pts[np.isfinite(pts)]
    if pts.size == 0:
        return (np.inf if fdp(0.0) <= alpha_tilde else -np.inf,) * 3
    span = max(pts[-1] - pts[0], 1.0)
    lo_edge, hi_edge = pts[0] - span, pts[-1] + span
    if fdp(hi_edge) <= alpha_tilde:
        return np.inf, np.inf, np.inf
    grid = np.linspace(lo_edge, pts[-1], grid_resolution)
    mids = (pts[:-1] + pts[1:]) / 2
    cands = np.unique(np.concatenate([grid, pts, mids]))
    ok = np.array([fdp(t) <= alpha_tilde for t in cands])
    exact = cands[ok].max() if ok.any() else -np.inf
    gok = np.array([fdp(t) <= alpha_tilde for t in grid])
    if not gok.any():
        return exact, -np.inf, grid[0]
    i = np.flatnonzero(gok)[-1]
    return exact, grid[i], grid[i + 1] if i + 1 < grid.size else np.inf


def brute_subsampling_evalues(cal: ScoreSet, test: ScoreSet, draw, alpha_tilde: float) -> list:
    """Subsampling e-values with thresholds from :func:`oracle_threshold`."""
    K = cal.n_groups
    n_test = int(test.sizes.sum())
    vh = subsampled(cal.Vhat, draw)
    nl = subsampled(cal.null, draw).astype(bool)
    a = vh[nl]
    out = []
    for j, v in enumerate(test.Vhat):
        den = np.concatenate([test.Vhat[l] for l in range(test.n_groups) if l != j] or [np.empty(0)])
        f = lambda t: direct_fdp(t, a, den, n_test / (K + 1))
        T = oracle_threshold(f, np.concatenate([a, den]), alpha_tilde, 50)[0]
        cnt = sum(1 for x in a if x < T)
        out.append(np.array([(K + 1) / (cnt + 1) if x < T else 0.0 for x in v]))
    return out


def brute_hierarchical_evalues(cal: ScoreSet, test: ScoreSet, alpha_tilde: float) -> list:
    K = cal.n_groups
    a = np.concatenate([vh[n] for vh, n in zip(cal.Vhat, cal.null)])
    w = np.concatenate([np.full(int(n.sum()), 1.0 / len(n)) for n in cal.null])
    sizes = test.sizes
    out = []
    for j, v in enumerate(test.Vhat):
        den = np.concatenate([test.Vhat[l] for l in range(test.n_groups) if l != j] or [np.empty(0)])
        mult = (sizes.sum() - sizes[j]) / (K + 1)
        pts = np.concatenate([a, den])
        Tp = oracle_threshold(lambda t: direct_fdp(t, a, den, mult, w, 1.0), pts, alpha_tilde, 50)[0]
        Tm = oracle_threshold(lambda t: direct_fdp(t, a, den, mult, w, 0.0), pts, alpha_tilde, 50)[0]
        cnt = sum(wi for x, wi in zip(a, w) if x < Tm)
        out.append(np.array([(K + 1) / (cnt + 1) if x < Tp else 0.0 for x in v]))
    return out


# --------------------------------------------------------- small-instance DGP


@dataclass(frozen=True)
class SmallInstance:
    """Cheap instances for validity checks: few groups, fixed test sizes.

    Scores use the linear part ``x' beta1`` as the predictor, an imperfect
    but informative score.
    """

    dgp: DgpConfig = field(default_factory=lambda: DgpConfig(p_G=2, p=3, lam=2.0, c_quantile=0.5, seed=7))
    K: int = 10
    M: int = 3
    test_size: int = 3
    alpha_tilde: float = 0.5

    def __post_init__(self):
        if not 1 <= self.K <= 20:
            raise ConfigError("validity instances keep K between 1 and 20")

    def _groups(self, rng, G, sizes):
        return [_units(self.dgp, rng, g, int(n)) for g, n in zip(G, sizes)]

    def mu(self, g, x):
        return np.asarray(x) @ self.dgp.beta1

    def draw(self, rng, G_test=None):
        cfg = self.dgp
        Gc = _draw_G(cfg, rng, self.K)
        Gt = _draw_G(cfg, rng, self.M) if G_test is None else G_test
        sc = 2 + rng.poisson(cfg.lam, self.K) if cfg.const_size is None else np.full(self.K, cfg.const_size)
        st = np.full(self.M, self.test_size)
        return Gc, self._groups(rng, Gc, sc), Gt, self._groups(rng, Gt, st)

    def scores(self, G, groups, role):
        c = self.dgp.cutoff
        Vhat = [c - self.mu(g, x) for g, (x, _) in zip(G, groups)]
        V = [y - self.mu(g, x) for g, (x, y) in zip(G, groups)]
        null = [y <= c for _, y in groups]
        return ScoreSet.from_arrays(Vhat, null, V, role=role)


@dataclass
class ValidityReport:
    method: str
    statistic: str
    mean: float
    se: float
    n_reps: int
    bar: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _summarise(method, statistic, vals, bar) -> ValidityReport:
    vals = np.asarray(vals, dtype=float)
    n = vals.size
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ValidityReport(method, statistic, mean, se, n, bar, bool(mean <= bar + 3 * se))


def _e_null_mean(table: EValueTable, null) -> float:
    e = table.flat()
    h = np.concatenate([np.asarray(n, dtype=bool) for n in null])
    return float(np.sum(e * h) / e.size)


def _p_null_rate(table: EValueTable, null, alpha: float) -> float:
    p = table.flat()
    h = np.concatenate([np.asarray(n, dtype=bool) for n in null])
    return float(np.mean((p <= alpha) & h))


def broken_subsampling_evalues(cal: ScoreSet, test: ScoreSet, draw, alpha_tilde: float) -> EValueTable:
    """Mutant with the ``+1`` dropped from the numerator count and the e-value denominator."""
    K = cal.n_groups
    n_test = int(test.sizes.sum())
    a = subsampled(cal.Vhat, draw)[subsampled(cal.null, draw).astype(bool)]
    T = leave_one_out_thresholds(a, test.Vhat, n_test / (K + 1), alpha_tilde, num_offsets=0.0)
    vals = [np.where(v < T[j], (K + 1) / max(int(np.sum(a < T[j])), 1), 0.0) for j, v in enumerate(test.Vhat)]
    return EValueTable(tuple(vals), "evalue")


def _individual_rep(inst, rng, kind, alpha):
    Gc, cal, Gt, test = inst.draw(rng)
    cs = inst.scores(Gc, cal, Role.CALIBRATION)
    ts = inst.scores(Gt, test, Role.TEST)
    at = inst.alpha_tilde
    if kind == "subsampling":
        return _e_null_mean(subsampling_evalues(cs, ts, draw_subsample(cs.sizes, rng), at), ts.null)
    if kind == "broken":
        return _e_null_mean(broken_subsampling_evalues(cs, ts, draw_subsample(cs.sizes, rng), at), ts.null)
    if kind == "hierarchical":
        return _e_null_mean(hierarchical_evalues(cs, ts, at), ts.null)
    if kind == "subsampling-p":
        return _p_null_rate(subsampling_pvalues(cs, ts, draw_subsample(cs.sizes, rng)), ts.null, alpha)
    if kind == "hier-p":
        return _p_null_rate(hierarchical_pvalues(cs, ts, "outcome_score"), ts.null, alpha)
    if kind == "hier-p-clipped":
        return _p_null_rate(hierarchical_pvalues(cs, ts, "clipped"), ts.null, alpha)
    if kind == "group-global":
        tab = group_global_evalues(subsampling_evalues(cs, ts, draw_subsample(cs.sizes, rng), at))
        hg = np.array([n.all() for n in ts.null])
        num = np.sum(tab.flat() * np.concatenate(ts.null)) + np.sum(tab.group_values * hg)
        return float(num / (tab.flat().size + hg.size))
    raise ConfigError(kind)


def _group_general_rep(inst, rng, alpha):
    Gc, cal, Gt, test = inst.draw(rng)
    mk = lambda G, groups, role: HierarchicalDataset(
        tuple(Group(x=x, y=y, g=g) for g, (x, y) in zip(G, groups)), role, inst.dgp.p, inst.dgp.p_G
    )
    cd, td = mk(Gc, cal, Role.CALIBRATION), mk(Gt, test, Role.TEST)
    c = inst.dgp.cutoff
    score = lambda g, x, cut: cut - float(np.mean(inst.mu(g, x)))
    vals, _, _ = group_general_evalues(cd, td, score, inst.alpha_tilde, h=np.mean, c_group=c)
    hg = np.array([np.mean(y) <= c for _, y in test])
    return float(np.mean(vals * hg))


def _weighted_rep(inst, rng, shift: ShiftConfig, alpha):
    Gt = shift.sample_tilted(rng, inst.M)
    Gc, cal, Gt, test = inst.draw(rng, Gt)
    cs = inst.scores(Gc, cal, Role.CALIBRATION)
    ts = inst.scores(Gt, test, Role.TEST)
    tab = weighted_subsampling_evalues(
        cs, ts, draw_subsample(cs.sizes, rng), shift.weight(Gc), shift.weight(Gt), inst.alpha_tilde
    )
    return _e_null_mean(tab, ts.null)


def _ite_rep(inst, rng, kind, tau, alpha):
    Gc, cal, Gt, test = inst.draw(rng)
    # calibration sees Y(1); test sees Y(0). Effect tau 1{x_0 > 0}.
    eff = lambda x: tau * (x[:, 0] > 0)
    treated = [y + eff(x) - inst.mu(g, x) for g, (x, y) in zip(Gc, cal)]
    control = [y - inst.mu(g, x) for g, (x, y) in zip(Gt, test)]
    null = [eff(x) <= 0 for x, _ in test]
    sc = IteScores.from_arrays(treated, control)
    if kind == "ite-subsampling":
        return _e_null_mean(ite_subsampling_evalues(sc, draw_subsample(sc_sizes(sc), rng), inst.alpha_tilde), null)
    if kind == "ite-hierarchical":
        return _e_null_mean(ite_hierarchical_evalues(sc, inst.alpha_tilde), null)
    if kind == "ite-p":
        return _p_null_rate(ite_pvalues(sc, draw_subsample(sc_sizes(sc), rng)), null, alpha)
    raise ConfigError(kind)


def sc_sizes(sc: IteScores):
    return [len(v) for v in sc.treated]


# construction name -> (statistic, needs alpha bar)
VALIDITY_SUITES = {
    "subsampling": "e",
    "hierarchical": "e",
    "group-general": "e",
    "weighted": "e",
    "ite-subsampling": "e",
    "ite-hierarchical": "e",
    "group-global": "e",
    "subsampling-p": "p",
    "hier-p": "p",
    "hier-p-clipped": "p",
    "ite-p": "p",
    "broken": "e",
}


def validity_check(
    method: str,
    n_reps: int = 10_000,
    seed: Optional[int] = 0,
    instance: Optional[SmallInstance] = None,
    alpha: float = 0.1,
    shift: Optional[ShiftConfig] = None,
    tau: float = 2.0,
) -> ValidityReport:
    """Monte Carlo check of one construction.

    e-value suites report the per-replication average of ``e 1{H}`` over
    the test hypotheses and pass when the mean is within ``3 SE`` of 1.
    p-value suites report the rate of ``{p <= alpha, null}`` against
    ``alpha``. ``broken`` is the no-``+1`` mutant, expected to fail.
    """
    if method not in VALIDITY_SUITES:
        raise ConfigError(f"unknown validity suite {method!r}; choose from {', '.join(VALIDITY_SUITES)}")
    if n_reps < 1:
        raise ConfigError("n_reps must be at least 1")
    inst = instance or SmallInstance()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_reps)]
    if method == "group-general":
        vals = [_group_general_rep(inst, r, alpha) for r in rngs]
    elif method == "weighted":
        sh = shift or ShiftConfig(inst.dgp, "truncation")
        vals = [_weighted_rep(inst, r, sh, alpha) for r in rngs]
    elif method.startswith("ite"):
        vals = [_ite_rep(inst, r, method, tau, alpha) for r in rngs]
    else:
        vals = [_individual_rep(inst, r, method, alpha) for r in rngs]
    stat = VALIDITY_SUITES[method]
    if stat == "e":
        return _summarise(method, "mean e*1{H}", vals, 1.0)
    return _summarise(method, f"P(p <= {alpha}, H)", vals, alpha)
