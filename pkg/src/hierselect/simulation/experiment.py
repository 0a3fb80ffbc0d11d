"""Monte Carlo experiments: repeated draws, selection, FDR/power aggregates.

Each trial draws fresh calibration and test data from its own child of the
master ``SeedSequence``; methods of the same data family share that draw.
Trial results are reduced in trial order, so serial and parallel runs are
bitwise identical.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from ..conformal import (
    DEFAULT_BUDGET,
    averaged_evalues,
    boost_evalues,
    derandomized_evalues,
    draw_subsample,
    external_uniform,
    group_general_evalues,
    group_global_evalues,
    hierarchical_evalues,
    hierarchical_pvalues,
    internal_uniform,
    ite_hierarchical_evalues,
    ite_pvalues,
    ite_subsampling_evalues,
    pbh_select,
    subsampling_evalues,
    weighted_subsampling_evalues,
)
from ..conformal.group import mean_prediction_group_score
from ..data import Role
from ..errors import ConfigError
from ..scoring import RidgePredictor, compute_ite_scores, compute_scores, constant_threshold, residual_score
from ..testing import RejectionSet, bh, ebh, metrics
from .dgp import DgpConfig, IteConfig, ShiftConfig, generate, generate_ite, generate_shifted

ALPHA_GRID = tuple(round(0.05 + 0.025 * i, 3) for i in range(9))

INDIVIDUAL = (
    "subsampling-ebh", "subsampling-uebh", "subsampling-pbh",
    "hierarchical-ebh", "hierarchical-uebh", "hier-p1-bh", "hier-p2-bh",
    "derandomized", "averaged",
)
JOINT = ("joint-group-global", "joint-group-general")
SHIFT = ("weighted", "weighted-unweighted")
ITE = ("ite-subsampling", "ite-subsampling-uebh", "ite-hierarchical", "ite-pbh")
METHODS = INDIVIDUAL + JOINT + SHIFT + ITE

BASE_COLUMNS = ("fdr", "power")
JOINT_COLUMNS = ("fdr", "power", "fdr_individual", "fdr_group", "power_individual", "power_group")


def desk_dgp(**kw) -> DgpConfig:
    base = dict(p_G=3, p=5, lam=5.0, sigma=1.0, c_quantile=0.8)
    base.update(kw)
    return DgpConfig(**base)


def full_scale_dgp(**kw) -> DgpConfig:
    base = dict(p_G=10, p=20, lam=5.0, sigma=1.0, c=20.0)
    base.update(kw)
    return DgpConfig(**base)


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment. ``alpha_tilde`` (fixed) overrides ``alpha_tilde_ratio * alpha``."""

    methods: tuple = ("subsampling-ebh",)
    alphas: tuple = ALPHA_GRID
    alpha_tilde_ratio: float = 0.9
    alpha_tilde: Optional[float] = None
    K: int = 100
    M: int = 20
    n_trials: int = 300
    K_train: int = 100
    seed: int = 0
    dgp: DgpConfig = field(default_factory=desk_dgp)
    r: int = 10
    boost: str = "external"
    tilt: str = "truncation"
    tilt_coord: int = 0
    theta: float = 0.5
    ite_tau: float = 5.0
    ite_p_A: Optional[float] = None
    ite_effect_noise: float = 0.0
    ridge_penalty: float = 1.0
    prefix_mode: str = "first_r"
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        methods = (self.methods,) if isinstance(self.methods, str) else tuple(self.methods)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if not methods:
            raise ConfigError("no methods requested")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be at least 1, got {self.n_trials}")
        if self.K < 1 or self.M < 1 or self.K_train < 1:
            raise ConfigError("K, M and K_train must be positive")
        if not self.alphas or any(not 0 < a < 1 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1)")
        if self.alpha_tilde is not None and not 0 < self.alpha_tilde < 1:
            raise ConfigError("alpha_tilde must lie in (0, 1)")
        if not 0 < self.alpha_tilde_ratio <= 1 / max(self.alphas) or self.alpha_tilde_ratio <= 0:
            raise ConfigError("alpha_tilde_ratio must keep alpha_tilde in (0, 1)")
        if self.boost not in ("external", "internal"):
            raise ConfigError("boost must be 'external' or 'internal'")
        if self.r < 1:
            raise ConfigError("r must be at least 1")
        if self.boost == "internal" and self.K < 2:
            raise ConfigError("internal boosting needs K >= 2")

    def alpha_tilde_for(self, alpha: float) -> float:
        return self.alpha_tilde if self.alpha_tilde is not None else self.alpha_tilde_ratio * alpha

    def shift_config(self) -> ShiftConfig:
        return ShiftConfig(self.dgp, self.tilt, self.tilt_coord, self.theta)

    def ite_config(self) -> IteConfig:
        return IteConfig(self.dgp, self.ite_p_A, self.ite_tau, self.ite_effect_noise)

    def echo(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "dgp"}
        d["methods"] = list(self.methods)
        d["alphas"] = list(self.alphas)
        d["dgp"] = self.dgp.echo()
        return d


def _family(method: str) -> str:
    if method in ITE:
        return "ite"
    if method in SHIFT:
        return "shift"
    return "base"


def _columns(method: str) -> tuple:
    return JOINT_COLUMNS if method in JOINT else BASE_COLUMNS


def train_model(spec: ExperimentSpec, family: str) -> RidgePredictor:
    """Ridge fit on ``K_train`` independent groups; fixed across trials."""
    ss = np.random.SeedSequence([spec.seed, 0xBEEF])
    if family == "ite":
        cal, _ = generate_ite(spec.ite_config(), spec.K_train, spec.K_train, np.random.default_rng(ss))
        return RidgePredictor(spec.ridge_penalty).fit(cal, target="y")
    train = generate(spec.dgp, spec.K_train, np.random.default_rng(ss))
    return RidgePredictor(spec.ridge_penalty).fit(train)


def _metric_row(rej: RejectionSet, null_units, null_groups=None) -> list:
    m = metrics(rej, null_units, null_groups)
    if null_groups is None:
        return [m.fdp, m.power]
    return [m.fdp, m.power, m.fdp_individual, m.fdp_group, m.power_individual, m.power_group]


def _boost_u(spec, cs, u_ss):
    if spec.boost == "internal":
        return internal_uniform(cs, u_ss.generate_state(1)[0])
    return external_uniform(u_ss.generate_state(1)[0]), cs


def _base_trial(spec: ExperimentSpec, model, methods, ss) -> dict:
    data_ss, draw_ss, u_ss, aux_ss = ss.spawn(4)
    rng = np.random.default_rng(data_ss)
    cutoff = spec.dgp.cutoff
    cal = generate(spec.dgp, spec.K, rng, Role.CALIBRATION, prefix="c")
    test = generate(spec.dgp, spec.M, rng, Role.TEST, prefix="t")
    s = residual_score(model)
    c = constant_threshold(cutoff)
    cs, ts = compute_scores(cal, s, c), compute_scores(test, s, c)
    null = ts.null
    draw = draw_subsample(cs.sizes, np.random.default_rng(draw_ss))
    group_null = np.array([np.mean(g.y) <= cutoff for g in test.groups])
    global_null = np.array([bool(np.all(n)) for n in null])

    out = {}
    for m in methods:
        rows = []
        if m in ("subsampling-uebh", "hierarchical-uebh"):
            u, cs_m = _boost_u(spec, cs, u_ss)
            draw_m = draw if cs_m is cs else draw_subsample(cs_m.sizes, np.random.default_rng(draw_ss))
        if m == "hier-p1-bh":
            p1 = hierarchical_pvalues(cs, ts, "outcome_score")
        elif m == "hier-p2-bh":
            p2 = hierarchical_pvalues(cs, ts, "clipped")
        for alpha in spec.alphas:
            at = spec.alpha_tilde_for(alpha)
            if m == "subsampling-ebh":
                rej = ebh(subsampling_evalues(cs, ts, draw, at), alpha)
            elif m == "subsampling-uebh":
                rej = ebh(boost_evalues(subsampling_evalues(cs_m, ts, draw_m, at), u), alpha)
            elif m == "subsampling-pbh":
                rej = RejectionSet(tuple(pbh_select(cs, ts, draw, alpha)))
            elif m == "hierarchical-ebh":
                rej = ebh(hierarchical_evalues(cs, ts, at), alpha)
            elif m == "hierarchical-uebh":
                rej = ebh(boost_evalues(hierarchical_evalues(cs_m, ts, at), u), alpha)
            elif m == "hier-p1-bh":
                rej = bh(p1, alpha)
            elif m == "hier-p2-bh":
                rej = bh(p2, alpha)
            elif m == "derandomized":
                rej = ebh(derandomized_evalues(cs, ts, at, spec.budget), alpha)
            elif m == "averaged":
                rej = ebh(averaged_evalues(cs, ts, at, spec.r, aux_ss), alpha)
            elif m == "joint-group-global":
                tab = group_global_evalues(subsampling_evalues(cs, ts, draw, at))
                rows.append(_metric_row(ebh(tab, alpha), null, global_null))
                continue
            elif m == "joint-group-general":
                ind = subsampling_evalues(cs, ts, draw, at)
                gv, gT, _ = group_general_evalues(
                    cal, test, mean_prediction_group_score(model), at, h=np.mean, c_group=cutoff,
                    prefix_mode=spec.prefix_mode, seed=aux_ss.generate_state(1)[0],
                )
                rows.append(_metric_row(ebh(ind.with_group_values(gv, gT), alpha), null, group_null))
                continue
            else:  # pragma: no cover - guarded by ExperimentSpec
                raise ConfigError(m)
            rows.append(_metric_row(rej, null))
        out[m] = np.array(rows, dtype=float)
    return out


def _shift_trial(spec: ExperimentSpec, model, methods, ss) -> dict:
    data_ss, draw_ss, _, _ = ss.spawn(4)
    cal, test, wc, wt = generate_shifted(spec.shift_config(), spec.K, spec.M, np.random.default_rng(data_ss))
    s = residual_score(model)
    c = constant_threshold(spec.dgp.cutoff)
    cs, ts = compute_scores(cal, s, c), compute_scores(test, s, c)
    draw = draw_subsample(cs.sizes, np.random.default_rng(draw_ss))
    out = {}
    for m in methods:
        rows = []
        for alpha in spec.alphas:
            at = spec.alpha_tilde_for(alpha)
            if m == "weighted":
                tab = weighted_subsampling_evalues(cs, ts, draw, wc, wt, at)
            else:
                tab = subsampling_evalues(cs, ts, draw, at)
            rows.append(_metric_row(ebh(tab, alpha), ts.null))
        out[m] = np.array(rows, dtype=float)
    return out


def _ite_trial(spec: ExperimentSpec, model, methods, ss) -> dict:
    data_ss, draw_ss, u_ss, _ = ss.spawn(4)
    cal, test = generate_ite(spec.ite_config(), spec.K, spec.M, np.random.default_rng(data_ss))
    sc = compute_ite_scores(cal, test, residual_score(model))
    null = [g.y_treated <= g.y_control for g in test.groups]
    draw = draw_subsample([len(v) for v in sc.treated], np.random.default_rng(draw_ss))
    u = external_uniform(u_ss.generate_state(1)[0])
    out = {}
    for m in methods:
        rows = []
        if m == "ite-pbh":
            p = ite_pvalues(sc, draw)
        for alpha in spec.alphas:
            at = spec.alpha_tilde_for(alpha)
            if m == "ite-subsampling":
                rej = ebh(ite_subsampling_evalues(sc, draw, at), alpha)
            elif m == "ite-subsampling-uebh":
                rej = ebh(boost_evalues(ite_subsampling_evalues(sc, draw, at), u), alpha)
            elif m == "ite-hierarchical":
                rej = ebh(ite_hierarchical_evalues(sc, at), alpha)
            else:
                rej = bh(p, alpha)
            rows.append(_metric_row(rej, null))
        out[m] = np.array(rows, dtype=float)
    return out


_TRIALS = {"base": _base_trial, "shift": _shift_trial, "ite": _ite_trial}


def _run_trial(spec: ExperimentSpec, models: dict, ss: np.random.SeedSequence) -> dict:
    out = {}
    for fam, fn in _TRIALS.items():
        ms = [m for m in spec.methods if _family(m) == fam]
        if ms:
            out.update(fn(spec, models[fam], ms, ss))
    return out


@dataclass
class AggregateResult:
    """Per-method, per-alpha means and standard errors over trials."""

    method: str
    alphas: tuple
    columns: tuple
    mean: np.ndarray
    se: np.ndarray
    n_trials: int

    @classmethod
    def from_trials(cls, method, alphas, columns, trials: np.ndarray) -> "AggregateResult":
        # trials: (n_trials, n_alpha, n_columns)
        n = trials.shape[0]
        mean = trials.mean(axis=0)
        se = trials.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        return cls(method, tuple(alphas), tuple(columns), mean, se, n)

    def value(self, column: str, alpha: float) -> tuple:
        """``(mean, se)`` for one column at one level."""
        a = self.alphas.index(float(alpha))
        c = self.columns.index(column)
        return float(self.mean[a, c]), float(self.se[a, c])

    def rows(self) -> list:
        out = []
        for a, alpha in enumerate(self.alphas):
            row = {"method": self.method, "alpha": alpha, "n_trials": self.n_trials}
            for c, name in enumerate(self.columns):
                row[name] = float(self.mean[a, c])
                row[name + "_se"] = float(self.se[a, c])
            out.append(row)
        return out


CSV_COLUMNS = ("method", "alpha", "fdr", "fdr_se", "power", "power_se", "n_trials")
LEVEL_COLUMNS = tuple(f"{c}{s}" for c in JOINT_COLUMNS[2:] for s in ("", "_se"))


def results_csv(results: Sequence[AggregateResult]) -> str:
    """One row per (method, alpha); per-level columns appear when any method is joint."""
    cols = CSV_COLUMNS + (LEVEL_COLUMNS if any(len(r.columns) > 2 for r in results) else ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in results:
        for row in r.rows():
            w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in cols])
    return buf.getvalue()


def trial_seeds(spec: ExperimentSpec) -> list:
    return np.random.SeedSequence(spec.seed).spawn(spec.n_trials)


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> list:
    """Run every method in ``spec``; returns one :class:`AggregateResult` per method."""
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    fams = {_family(m) for m in spec.methods}
    models = {f: train_model(spec, f) for f in fams}
    seeds = trial_seeds(spec)
    work = partial(_run_trial, spec, models)
    if threads == 1:
        per_trial = [work(ss) for ss in seeds]
    else:
        chunk = max(1, len(seeds) // (4 * threads))
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(work, seeds, chunksize=chunk))
    out = []
    for m in spec.methods:
        stacked = np.stack([t[m] for t in per_trial])
        out.append(AggregateResult.from_trials(m, spec.alphas, _columns(m), stacked))
    return out
