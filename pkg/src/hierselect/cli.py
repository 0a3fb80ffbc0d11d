"""Command-line front end: ``simulate``, ``select`` and ``validate``.

Exit codes: 0 success, 2 configuration or input schema error, 3 method
guard tripped (e.g. a non-monotone score), 4 internal invariant breach.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .conformal import (
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
    pbh_threshold,
    subsampling_evalues,
    subsampling_pvalues,
    weighted_subsampling_evalues,
)
from .conformal.core import EValueTable
from .conformal.group import mean_prediction_group_score
from .data import Role, load_csv
from .errors import ConfigError, HierSelectError, MissingWeightError
from .scoring import (
    PredictionTable,
    RidgePredictor,
    ScoreFunction,
    compute_ite_scores,
    compute_scores,
    constant_threshold,
    residual_score,
)
from .simulation.dgp import DgpConfig
from .simulation.experiment import METHODS, ExperimentSpec, results_csv, run_experiment
from .simulation.oracles import VALIDITY_SUITES, SmallInstance, validity_check
from .testing import RejectionSet, bh, ebh

# Recorded in every manifest so results can be traced to formula choices.
FORMULA_VARIANTS = {
    "comparisons": "strict < t in every indicator; estimated FDPs are left-continuous",
    "subsampling_multiplier": "sum_{l=1..M} N_{K+l} / (K+1), denominator over l != j",
    "hierarchical_multiplier": "sum_{l != j} N_{K+l} / (K+1)",
    "weighted_multiplier": "sum_{l=1..M} N_{K+l} with p-normalised numerator (reduces to unweighted at w = 1)",
    "group_general_normaliser": "|I_{>=r}| + 1",
    "group_general_denominator": "1 v sum_{l=1..M} 1{Vhat_{K+l} < t}",
    "hier_p_clipped": "Vhat on null calibration units, +inf elsewhere",
    "ebh_ties": "reject every e >= e_(l*)",
    "default_alpha_tilde": "0.9 * alpha",
}

_DGP_KEYS = {"p_G", "p", "lam", "sigma", "c", "c_quantile", "const_size", "beta_low", "beta_high"}
_SPEC_KEYS = {f.name for f in fields(ExperimentSpec)} - {"dgp"}


def _read_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a flat JSON object")
    for k, v in cfg.items():
        if isinstance(v, dict):
            raise ConfigError(f"config key {k!r}: nested objects are not supported")
    return cfg


def _check_level(x, name):
    if x is not None and not 0 < x < 1:
        raise ConfigError(f"{name} must lie in (0, 1), got {x}")
    return x


def build_spec(cfg: dict, args) -> ExperimentSpec:
    """Merge defaults, optional full-scale preset, config file and flags."""
    cfg = dict(cfg)
    unknown = set(cfg) - _DGP_KEYS - _SPEC_KEYS - {"dgp_seed", "method"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    dgp = dict(p_G=3, p=5, lam=5.0, sigma=1.0, c_quantile=0.8)
    spec = {}
    if args.paper_scale:
        print("warning: full-scale run (p_G=10, p=20, K=200, 500 trials) may take a long time", file=sys.stderr)
        dgp = dict(p_G=10, p=20, lam=5.0, sigma=1.0, c=20.0, c_quantile=None)
        spec.update(K=200, n_trials=500)
    for k, v in cfg.items():
        if k in _DGP_KEYS:
            dgp[k] = v
        elif k == "dgp_seed":
            dgp["seed"] = v
        elif k == "method":
            spec["methods"] = (v,) if isinstance(v, str) else tuple(v)
        else:
            spec[k] = v
    if "c" in cfg and "c_quantile" not in cfg:
        dgp["c_quantile"] = None
    if args.method:
        spec["methods"] = tuple(m.strip() for m in args.method.split(",") if m.strip())
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.alpha is not None:
        spec["alphas"] = (_check_level(args.alpha, "alpha"),)
    if args.alpha_tilde is not None:
        spec["alpha_tilde"] = _check_level(args.alpha_tilde, "alpha-tilde")
    if args.r is not None:
        spec["r"] = args.r
    if args.boost in ("external", "internal"):
        spec["boost"] = args.boost
    for k in ("alphas", "methods"):
        if k in spec and isinstance(spec[k], list):
            spec[k] = tuple(spec[k])
    try:
        return ExperimentSpec(dgp=DgpConfig(**dgp), **spec)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from None


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_simulate(args) -> int:
    spec = build_spec(_read_config(args.config), args)
    t0 = time.perf_counter()
    results = run_experiment(spec, threads=args.threads)
    wall = time.perf_counter() - t0
    out = Path(args.out)
    text = results_csv(results)
    manifest = {
        "library": "hierselect",
        "version": __version__,
        "seed": spec.seed,
        "threads": args.threads,
        "wall_time_s": wall,
        "config": spec.echo(),
        "formula_variants": FORMULA_VARIANTS,
        "results_csv": str(out),
    }
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    _atomic_write(out, text)
    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    print(f"wrote {out} ({len(results)} methods x {len(spec.alphas)} levels) in {wall:.1f}s")
    return 0


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ------------------------------------------------------------------- select


class _AbsTableResidual(ScoreFunction):
    """``|v - mu|``: a legitimate score, but not monotone in ``v``."""

    def __init__(self, table):
        super().__init__(lambda g, x, v: None, monotone=False, name="abs-residual")
        self.table = table

    def evaluate_group(self, group, k, v):
        return np.abs(np.asarray(v, dtype=float) - self.table.for_group(group))


def _score(args, train_role_ite: bool):
    if args.predictions and args.train:
        raise ConfigError("give either --predictions or --train, not both")
    if args.predictions:
        table = PredictionTable.load_csv(args.predictions)
        if args.score == "abs-residual":
            return _AbsTableResidual(table), None
        return table.residual_score(), None
    if args.train:
        train = load_csv(args.train, Role.CALIBRATION)
        model = RidgePredictor(args.ridge_penalty).fit(train)
        if args.score == "abs-residual":
            fn = lambda g, x, v: np.abs(v - model(g, x))
            return ScoreFunction(fn, monotone=False, name="abs-residual"), model
        return residual_score(model), model
    raise ConfigError("select needs --predictions CSV or --train CSV for the built-in ridge model")


SELECT_METHODS = tuple(m for m in METHODS if m != "weighted-unweighted")


def _ds_weights(ds, what):
    w = [g.weight for g in ds.groups]
    if any(v is None for v in w):
        missing = [g.group_id for g in ds.groups if g.weight is None][:5]
        raise MissingWeightError(f"weighted method needs a 'w' column on every {what} group; missing for {missing}")
    return np.array(w, dtype=float)


def cmd_select(args) -> int:
    method = args.method or "subsampling-ebh"
    if method not in SELECT_METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(SELECT_METHODS)}")
    alpha = _check_level(args.alpha if args.alpha is not None else 0.1, "alpha")
    at = _check_level(args.alpha_tilde if args.alpha_tilde is not None else 0.9 * alpha, "alpha-tilde")
    boost = args.boost or "none"
    if method.endswith("-uebh") and boost == "none":
        boost = "external"
    base = method.replace("-uebh", "-ebh") if method.startswith(("subsampling", "hierarchical")) else method
    if base == "ite-subsampling-uebh":
        base = "ite-subsampling"
    ss = np.random.SeedSequence(args.seed or 0)
    draw_ss, u_ss, aux_ss = ss.spawn(3)

    cal = load_csv(args.calibration, Role.CALIBRATION)
    test = load_csv(args.test, Role.TEST)
    s, model = _score(args, base.startswith("ite"))
    cutoff = args.cutoff
    thr_plus = thr_minus = None
    pvalue = False

    if base.startswith("ite"):
        sc = compute_ite_scores(cal, test, s, shift=cutoff)
        if boost == "internal":
            raise ConfigError("internal boosting is not available for treatment-effect selection")
        draw = draw_subsample([len(v) for v in sc.treated], np.random.default_rng(draw_ss))
        if base == "ite-subsampling":
            table = ite_subsampling_evalues(sc, draw, at)
        elif base == "ite-hierarchical":
            table = ite_hierarchical_evalues(sc, at)
        else:
            table, pvalue = ite_pvalues(sc, draw), True
    else:
        cs = compute_scores(cal, s, constant_threshold(cutoff))
        ts = compute_scores(test, s, constant_threshold(cutoff))
        u = 1.0
        if boost == "internal" and base not in ("subsampling-pbh", "hier-p1-bh", "hier-p2-bh"):
            u, cs = internal_uniform(cs, u_ss.generate_state(1)[0])
        elif boost == "external":
            u = external_uniform(u_ss.generate_state(1)[0])
        draw = draw_subsample(cs.sizes, np.random.default_rng(draw_ss))
        if base == "subsampling-ebh":
            table = subsampling_evalues(cs, ts, draw, at)
        elif base == "hierarchical-ebh":
            table = hierarchical_evalues(cs, ts, at)
        elif base == "derandomized":
            table = derandomized_evalues(cs, ts, at, args.budget)
        elif base == "averaged":
            table = averaged_evalues(cs, ts, at, args.r or 10, aux_ss)
        elif base == "joint-group-global":
            table = group_global_evalues(subsampling_evalues(cs, ts, draw, at))
        elif base == "joint-group-general":
            if model is None:
                raise ConfigError("joint-group-general needs --train (group scores use the fitted model)")
            gv, gT, _ = group_general_evalues(
                cal, test, mean_prediction_group_score(model), at, h=np.mean, c_group=cutoff
            )
            table = subsampling_evalues(cs, ts, draw, at).with_group_values(gv, gT)
        elif base == "weighted":
            table = weighted_subsampling_evalues(
                cs, ts, draw, _ds_weights(cal, "calibration"), _ds_weights(test, "test"), at
            )
        elif base == "subsampling-pbh":
            table, pvalue = subsampling_pvalues(cs, ts, draw), True
            T = pbh_threshold(cs, ts, draw, alpha)
            table = EValueTable(table.values, "pvalue", threshold_plus=np.full(ts.n_groups, T))
        elif base == "hier-p1-bh":
            table, pvalue = hierarchical_pvalues(cs, ts, "outcome_score"), True
        elif base == "hier-p2-bh":
            table, pvalue = hierarchical_pvalues(cs, ts, "clipped"), True
        else:
            raise ConfigError(f"method {method!r} is not available in select")
        if not pvalue and u != 1.0:
            table = boost_evalues(table, u)
    table.check()
    rej = bh(table, alpha) if pvalue else ebh(table, alpha)
    _write_selection(Path(args.out), test, table, rej)
    print(f"selected {rej.n_rejected} of {rej.n_hypotheses} hypotheses ({method}, alpha={alpha})")
    return 0


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _write_selection(path: Path, test, table: EValueTable, rej: RejectionSet) -> None:
    tp, tm = table.threshold_plus, table.threshold_minus
    buf_rows = [("group_id", "unit_index", "selected", "value", "kind", "threshold_plus", "threshold_minus")]
    for j, grp in enumerate(test.groups):
        for i in range(grp.size):
            buf_rows.append((grp.group_id, i, int(rej.units[j][i]), _num(table.values[j][i]), table.kind,
                             _num(None if tp is None else tp[j]), _num(None if tm is None else tm[j])))
    if table.group_values is not None:
        gt = table.group_threshold
        for j, grp in enumerate(test.groups):
            buf_rows.append((grp.group_id, "", int(rej.groups[j]), _num(table.group_values[j]), table.kind,
                             _num(None if gt is None else gt[j]), ""))
    sio = io.StringIO()
    csv.writer(sio, lineterminator="\n").writerows(buf_rows)
    _atomic_write(path, sio.getvalue())


# ----------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    method = args.method or "subsampling"
    if method not in VALIDITY_SUITES:
        raise ConfigError(f"unknown validity suite {method!r}; choose from {', '.join(VALIDITY_SUITES)}")
    if args.n_reps < 1:
        raise ConfigError(f"n-reps must be at least 1, got {args.n_reps}")
    cfg = _read_config(args.config)
    inst_keys = {"K", "M", "test_size", "alpha_tilde"}
    unknown = set(cfg) - inst_keys - _DGP_KEYS - {"dgp_seed"}
    if unknown:
        raise ConfigError(f"unknown validate config keys: {sorted(unknown)}")
    dgp = dict(p_G=2, p=3, lam=2.0, c_quantile=0.5, seed=7)
    dgp.update({k: v for k, v in cfg.items() if k in _DGP_KEYS})
    if "dgp_seed" in cfg:
        dgp["seed"] = cfg["dgp_seed"]
    if "c" in cfg and "c_quantile" not in cfg:
        dgp["c_quantile"] = None
    inst = dict(alpha_tilde=args.alpha_tilde) if args.alpha_tilde is not None else {}
    inst.update({k: v for k, v in cfg.items() if k in inst_keys})
    instance = SmallInstance(DgpConfig(**dgp), **inst)
    alpha = _check_level(args.alpha if args.alpha is not None else 0.1, "alpha")
    rep = validity_check(method, args.n_reps, args.seed or 0, instance, alpha=alpha)
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(Path(args.out), text)
    print(text, end="")
    return 0


# --------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hierselect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hierselect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--alpha", type=float, default=None)
        sp.add_argument("--alpha-tilde", type=float, default=None, help="default 0.9 * alpha")
        sp.add_argument("--method", default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--boost", choices=("none", "external", "internal"), default=None)
        sp.add_argument("--r", type=int, default=None, help="draws for the averaged method")
        sp.add_argument("--paper-scale", action="store_true",
                        help="full-size preset: p_G=10, p=20, c=20, K=200, 500 trials")

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment and write a result CSV")
    common(sim)
    sim.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    sim.set_defaults(func=cmd_simulate, out="results.csv")

    sel = sub.add_parser("select", help="select test units from calibration/test CSVs")
    common(sel)
    sel.add_argument("--calibration", required=True)
    sel.add_argument("--test", required=True)
    sel.add_argument("--predictions", help="CSV with group_id, unit_index, mu for all groups")
    sel.add_argument("--train", help="training CSV for the built-in ridge model")
    sel.add_argument("--cutoff", type=float, default=0.0, help="select y > cutoff (ITE: Y(1) - Y(0) > cutoff)")
    sel.add_argument("--score", choices=("residual", "abs-residual"), default="residual")
    sel.add_argument("--ridge-penalty", type=float, default=1.0)
    sel.add_argument("--budget", type=int, default=10**6, help="derandomisation enumeration budget")
    sel.set_defaults(func=cmd_select, out="selection.csv")

    val = sub.add_parser("validate", help="Monte Carlo validity check of one construction")
    common(val)
    val.add_argument("--n-reps", type=int, default=10_000)
    val.set_defaults(func=cmd_validate, out=None)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except HierSelectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
