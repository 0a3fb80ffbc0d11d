"""Synthetic hierarchical data.

Base model, per group::

    G ~ Unif([-5, 5])^{p_G}
    N ~ 2 + Poisson(lambda)          (or a constant size)
    X_i | G ~ N_p(A G, 3 I)
    Y_i | X_i, G ~ N(beta1' X_i + log|beta2' G|, sigma^2 ||X_i|| / p)

``A`` (standard normal entries) and ``beta1``, ``beta2`` (uniform entries)
are drawn once from ``DgpConfig.seed`` and stay fixed across trials.
Selection targets ``Y > cutoff``, where ``cutoff`` is ``c`` or, when
``c_quantile`` is set, that quantile of the marginal outcome law.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..data import Group, HierarchicalDataset, Role
from ..errors import ConfigError

# |beta2' G| below this is treated as the zero-probability singular event
_LOG_EPS = 1e-12


@dataclass(frozen=True)
class DgpConfig:
    p_G: int = 3
    p: int = 5
    lam: float = 5.0
    sigma: float = 1.0
    c: float = 20.0
    seed: int = 0
    c_quantile: Optional[float] = None
    const_size: Optional[int] = None
    beta_low: float = 0.0
    beta_high: float = 1.0
    A: np.ndarray = field(init=False, repr=False, compare=False)
    beta1: np.ndarray = field(init=False, repr=False, compare=False)
    beta2: np.ndarray = field(init=False, repr=False, compare=False)
    cutoff: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.p < 1 or self.p_G < 1:
            raise ConfigError("p and p_G must be positive")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.const_size is not None and self.const_size < 1:
            raise ConfigError("const_size must be at least 1")
        rng = np.random.default_rng(self.seed)
        A = rng.standard_normal((self.p, self.p_G))
        b1 = rng.uniform(self.beta_low, self.beta_high, self.p)
        b2 = rng.uniform(self.beta_low, self.beta_high, self.p_G)
        for name, v in (("A", A), ("beta1", b1), ("beta2", b2)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        cut = float(self.c)
        if self.c_quantile is not None:
            if not 0.0 < self.c_quantile < 1.0:
                raise ConfigError("c_quantile must lie in (0, 1)")
            cut = self._pilot_quantile(self.c_quantile)
        object.__setattr__(self, "cutoff", cut)

    def _pilot_quantile(self, q: float, n: int = 200_000) -> float:
        # one unit per group has the marginal law of every unit
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1]))
        G = _draw_G(self, rng, n)
        x = G @ self.A.T + np.sqrt(3.0) * rng.standard_normal((n, self.p))
        mean = x @ self.beta1 + np.log(np.abs(G @ self.beta2))
        sd = self.sigma * np.sqrt(np.linalg.norm(x, axis=1) / self.p)
        return float(np.quantile(mean + sd * rng.standard_normal(n), q))

    def echo(self) -> dict:
        return {k: getattr(self, k) for k in
                ("p_G", "p", "lam", "sigma", "c", "c_quantile", "cutoff", "seed",
                 "const_size", "beta_low", "beta_high")}


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _draw_G(cfg: DgpConfig, rng, n: int) -> np.ndarray:
    G = rng.uniform(-5.0, 5.0, (n, cfg.p_G))
    bad = np.abs(G @ cfg.beta2) < _LOG_EPS
    while bad.any():
        G[bad] = rng.uniform(-5.0, 5.0, (int(bad.sum()), cfg.p_G))
        bad = np.abs(G @ cfg.beta2) < _LOG_EPS
    return G


def _draw_sizes(cfg: DgpConfig, rng, n: int) -> np.ndarray:
    if cfg.const_size is not None:
        return np.full(n, cfg.const_size, dtype=int)
    return 2 + rng.poisson(cfg.lam, n)


def _units(cfg: DgpConfig, rng, g: np.ndarray, n: int):
    x = g @ cfg.A.T + np.sqrt(3.0) * rng.standard_normal((n, cfg.p))
    mean = x @ cfg.beta1 + np.log(np.abs(cfg.beta2 @ g))
    sd = cfg.sigma * np.sqrt(np.linalg.norm(x, axis=1) / cfg.p)
    return x, mean + sd * rng.standard_normal(n)


def mean_outcome(cfg: DgpConfig, g, x) -> np.ndarray:
    """Conditional mean ``E[Y | X, G]`` (the oracle predictor)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x @ cfg.beta1 + np.log(np.abs(cfg.beta2 @ np.asarray(g, dtype=float)))


def _build(cfg, rng, G, sizes, role, prefix, weights=None) -> HierarchicalDataset:
    groups = []
    for k, (g, n) in enumerate(zip(G, sizes)):
        x, y = _units(cfg, rng, g, int(n))
        groups.append(Group(
            x=x, y=y, g=g, group_id=f"{prefix}{k}",
            weight=None if weights is None else float(weights[k]),
        ))
    return HierarchicalDataset(tuple(groups), Role(role), cfg.p, cfg.p_G)


def generate(
    cfg: DgpConfig, n_groups: int, seed=None, role=Role.CALIBRATION,
    sizes: Optional[Sequence[int]] = None, prefix: str = "g",
) -> HierarchicalDataset:
    """``n_groups`` independent groups. ``sizes`` pins the group sizes.

    Test datasets keep their outcomes for evaluation only.
    """
    if n_groups < 0:
        raise ConfigError("n_groups must be nonnegative")
    rng = _rng(seed)
    G = _draw_G(cfg, rng, n_groups)
    if sizes is None:
        sizes = _draw_sizes(cfg, rng, n_groups)
    elif len(sizes) != n_groups:
        raise ConfigError("one size per group required")
    return _build(cfg, rng, G, sizes, role, prefix)


# ------------------------------------------------------------- covariate shift


@dataclass(frozen=True)
class ShiftConfig:
    """Tilt of the test-group feature law on coordinate ``coord``.

    ``kind``: ``none``; ``truncation`` (test ``g_coord ~ Unif[0, 5]``, so
    ``w = 2 1{g_coord >= 0}``); ``exponential`` (test density proportional to
    ``exp(theta g_coord)`` on ``[-5, 5]``).
    """

    base: DgpConfig = field(default_factory=DgpConfig)
    kind: str = "truncation"
    coord: int = 0
    theta: float = 0.5

    def __post_init__(self):
        if self.kind not in ("none", "truncation", "exponential"):
            raise ConfigError(f"unknown tilt {self.kind!r}")
        if not 0 <= self.coord < self.base.p_G:
            raise ConfigError("tilt coordinate out of range")
        if self.kind == "exponential" and (self.theta == 0 or not np.isfinite(self.theta) or abs(self.theta) > 50):
            raise ConfigError("exponential tilt needs a finite nonzero theta (|theta| <= 50)")

    def weight(self, G) -> np.ndarray:
        """Exact density ratio ``dP~_G / dP_G`` at each row of ``G``."""
        g = np.atleast_2d(np.asarray(G, dtype=float))[:, self.coord]
        if self.kind == "none":
            return np.ones_like(g)
        if self.kind == "truncation":
            return 2.0 * (g >= 0)
        t = self.theta
        return 10.0 * t * np.exp(t * g) / (np.exp(5 * t) - np.exp(-5 * t))

    def sample_tilted(self, rng, n: int) -> np.ndarray:
        G = _draw_G(self.base, rng, n)
        u = rng.random(n)
        if self.kind == "truncation":
            G[:, self.coord] = 5.0 * u
        elif self.kind == "exponential":
            t = self.theta
            lo, hi = np.exp(-5 * t), np.exp(5 * t)
            G[:, self.coord] = np.log(lo + u * (hi - lo)) / t
        bad = np.abs(G @ self.base.beta2) < _LOG_EPS
        if bad.any():
            G[bad] = self.sample_tilted(rng, int(bad.sum()))
        return G


def generate_shifted(cfg: ShiftConfig, K: int, M: int, seed=None):
    """Calibration groups from ``P_G``, test groups from the tilted law.

    Returns ``(calibration, test, cal_weights, test_weights)``; each group
    also carries its weight.
    """
    rng = _rng(seed)
    base = cfg.base
    Gc = _draw_G(base, rng, K)
    Gt = cfg.sample_tilted(rng, M)
    wc, wt = cfg.weight(Gc), cfg.weight(Gt)
    cal = _build(base, rng, Gc, _draw_sizes(base, rng, K), Role.CALIBRATION, "c", wc)
    test = _build(base, rng, Gt, _draw_sizes(base, rng, M), Role.TEST, "t", wt)
    return cal, test, wc, wt


# ------------------------------------------------------------ treatment effect


@dataclass(frozen=True)
class IteConfig:
    """Potential outcomes: ``Y(0)`` from the base model and
    ``Y(1) = Y(0) + tau 1{x_0 > 0} + effect_noise * eps``."""

    base: DgpConfig = field(default_factory=lambda: DgpConfig(lam=5.0))
    p_A: Optional[float] = None
    tau: float = 5.0
    effect_noise: float = 0.0
    max_redraws: int = 10_000

    def __post_init__(self):
        if self.p_A is not None and not 0.0 < self.p_A < 1.0:
            raise ConfigError(f"p_A must lie in (0, 1), got {self.p_A}")
        if self.effect_noise < 0:
            raise ConfigError("effect_noise must be nonnegative")

    def effect(self, x) -> np.ndarray:
        return self.tau * (np.atleast_2d(x)[:, 0] > 0)


def generate_ite(cfg: IteConfig, K: int, M: int, seed=None):
    """``K`` treated calibration and ``M`` control test groups.

    Group labels ``A_k ~ Bernoulli(p_A)`` are redrawn until exactly ``K``
    are treated. The conditional law does not depend on ``p_A``; the default
    ``K / (K + M)`` only keeps the number of redraws small. Calibration ``y = Y(1)``, test ``y = Y(0)``; both
    counterfactuals stay on the groups for evaluation. Returns
    ``(calibration, test)``.
    """
    rng = _rng(seed)
    base = cfg.base
    n = K + M
    G = _draw_G(base, rng, n)
    sizes = _draw_sizes(base, rng, n)
    p_A = cfg.p_A if cfg.p_A is not None else K / n
    for _ in range(cfg.max_redraws):
        A = rng.random(n) < p_A
        if A.sum() == K:
            break
    else:
        raise ConfigError("could not match the treated-group count; adjust p_A")
    cal, test = [], []
    for k in range(n):
        x, y0 = _units(base, rng, G[k], int(sizes[k]))
        y1 = y0 + cfg.effect(x)
        if cfg.effect_noise:
            y1 = y1 + cfg.effect_noise * rng.standard_normal(len(y0))
        t = bool(A[k])
        grp = Group(x=x, y=y1 if t else y0, g=G[k], treated=t,
                    group_id=f"{'c' if t else 't'}{k}", y_treated=y1, y_control=y0)
        (cal if t else test).append(grp)
    return (HierarchicalDataset(tuple(cal), Role.CALIBRATION, base.p, base.p_G),
            HierarchicalDataset(tuple(test), Role.TEST, base.p, base.p_G))


def with_base(cfg, **changes):
    """Copy a shift/ITE config with a modified base DGP."""
    return replace(cfg, base=replace(cfg.base, **changes))
