"""Cluster (branching) simulation of Cox-Hawkes and its special cases.

Background events come from a piecewise-constant log-Gaussian rate; each
event then spawns a Poisson(alpha) number of children with exponential delays
and Gaussian displacements.  Children falling outside the window are never
instantiated, so their would-be descendants are dropped as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .domain import Domain, Event, EventSet, GPHyper, ModelKind, TriggerParams
from .gp import Grid1D, Grid2D, GridField, precompute_basis, sample_field

MAX_EVENTS = 1_000_000


class RunawayCascadeError(RuntimeError):
    """The branching process produced more events than the safety cap."""


class InsufficientEventsError(ValueError):
    """Too few events for the residual test."""


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator identified by ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class HyperPrior:
    """Inverse-gamma length scale and log-normal variance for one GP."""

    length_shape: float
    length_scale: float
    log_var_mean: float = 0.0
    log_var_sd: float = 0.1

    def draw(self, rng: np.random.Generator, mean: float = 0.0) -> GPHyper:
        ell = stats.invgamma.rvs(self.length_shape, scale=self.length_scale, random_state=rng)
        var = float(np.exp(rng.normal(self.log_var_mean, self.log_var_sd)))
        return GPHyper(float(ell), var, mean)


@dataclass(frozen=True)
class SimConfig:
    domain: Domain
    kind: ModelKind = ModelKind.COX_HAWKES
    a0: float = 0.8
    trigger: TriggerParams | None = None
    gp_t: GPHyper | None = None
    gp_s: GPHyper | None = None
    n_t: int = 50
    n_x: int = 25
    n_y: int = 25
    var_frac: float = 1.0
    seed: int = 0
    f_t: np.ndarray | None = field(default=None, compare=False)
    f_s: np.ndarray | None = field(default=None, compare=False)
    background_method: str = "categorical"
    hyperprior_t: HyperPrior | None = None
    hyperprior_s: HyperPrior | None = None

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind.has_trigger:
            if self.trigger is None:
                raise ValueError(f"model kind {kind.value} requires trigger parameters")
            if not self.trigger.is_stationary:
                raise ValueError(f"alpha={self.trigger.alpha} >= 1: process is not stationary")
        if kind.has_gp:
            if self.f_t is None and self.gp_t is None and self.hyperprior_t is None:
                raise ValueError("LGCP background needs gp_t (or a fixed f_t)")
            if self.f_s is None and self.gp_s is None and self.hyperprior_s is None:
                raise ValueError("LGCP background needs gp_s (or a fixed f_s)")
        if self.background_method not in ("categorical", "rejection"):
            raise ValueError("background_method must be 'categorical' or 'rejection'")

    def grids(self) -> tuple[Grid1D, Grid2D]:
        return Grid1D.for_domain(self.domain, self.n_t), Grid2D.for_domain(self.domain, self.n_x, self.n_y)


@dataclass(frozen=True, eq=False)
class SimResult:
    events: EventSet
    config: SimConfig
    grid_t: Grid1D
    grid_s: Grid2D
    f_t: GridField | None
    f_s: GridField | None
    gp_t: GPHyper | None = None
    gp_s: GPHyper | None = None

    @property
    def n_background(self) -> int:
        return int(np.sum(self.events.gen == 0))

    @property
    def n_offspring(self) -> int:
        return int(np.sum(self.events.gen > 0))

    def true_compensator(self):
        """``Lambda(t)`` of the generating process, using the realized fields."""
        from .gp import LowRankBasis
        from .likelihood import Background, ParamState, temporal_compensator

        cfg = self.config
        if self.f_t is None:
            return temporal_compensator(ParamState(cfg.a0, cfg.trigger), self.events, None, cfg.domain)
        # identity bases make the coefficients equal the field values
        bt = LowRankBasis(np.eye(self.grid_t.size), self.gp_t, self.grid_t, 1.0, 1.0)
        bs = LowRankBasis(np.eye(self.grid_s.size), self.gp_s, self.grid_s, 1.0, 1.0)
        state = ParamState(cfg.a0, cfg.trigger, self.f_t.values, self.f_s.values)
        return temporal_compensator(state, self.events, Background(self.grid_t, bt, self.grid_s, bs), cfg.domain)


def simulate_background(f_t, f_s, a0: float, domain: Domain, rng: np.random.Generator,
                        grid_t: Grid1D | None = None, grid_s: Grid2D | None = None,
                        method: str = "categorical") -> EventSet:
    """Inhomogeneous Poisson events with rate ``exp(a0 + f_t(t) + f_s(x, y))``.

    ``f_t``/``f_s`` may be ``None`` for a flat field.  The count is drawn from
    the quadrature mass; locations are then placed either by a categorical
    draw over cells plus uniform jitter, or by rejection against the maximum.
    """
    if grid_t is None:
        grid_t = Grid1D(domain.t_max, 1 if f_t is None else len(_values(f_t)))
    if grid_s is None:
        grid_s = Grid2D(domain.x_range, domain.y_range, 1, 1) if f_s is None else None
        if grid_s is None:
            raise ValueError("grid_s is required with a spatial field")
    ft = np.zeros(grid_t.size) if f_t is None else _values(f_t)
    fs = np.zeros(grid_s.size) if f_s is None else _values(f_s)
    if len(ft) != grid_t.size or len(fs) != grid_s.size:
        raise ValueError("field length does not match its grid")
    if a0 == -math.inf:
        return _labelled(EventSet.empty(), 0)
    wt = np.exp(ft - ft.max())
    ws = np.exp(fs - fs.max())
    mass = math.exp(a0 + ft.max() + fs.max()) * wt.sum() * grid_t.cell_width * ws.sum() * grid_s.cell_area
    n = int(rng.poisson(mass))
    if n == 0:
        return _labelled(EventSet.empty(), 0)
    if method == "categorical":
        ct = rng.choice(grid_t.size, size=n, p=wt / wt.sum())
        t = grid_t.edges[ct] + rng.random(n) * grid_t.cell_width
        cs = rng.choice(grid_s.size, size=n, p=ws / ws.sum())
        x0, x1, y0, y1 = grid_s.cell_bounds(cs)
        x = x0 + rng.random(n) * (x1 - x0)
        y = y0 + rng.random(n) * (y1 - y0)
    elif method == "rejection":
        t = _rejection_1d(n, grid_t, wt, rng)
        x, y = _rejection_2d(n, grid_s, ws, rng)
    else:
        raise ValueError(f"unknown background method {method!r}")
    return _labelled(EventSet(t, x, y), 0)


def _rejection_1d(n, grid, w, rng):
    out = []
    while len(out) < n:
        cand = rng.random(2 * n) * grid.t_max
        keep = rng.random(2 * n) < w[grid.index(cand)]
        out.extend(cand[keep].tolist())
    return np.asarray(out[:n])


def _rejection_2d(n, grid, w, rng):
    xs, ys = [], []
    (x0, x1), (y0, y1) = grid.x_range, grid.y_range
    while len(xs) < n:
        cx = x0 + rng.random(2 * n) * (x1 - x0)
        cy = y0 + rng.random(2 * n) * (y1 - y0)
        keep = rng.random(2 * n) < w[grid.index(cx, cy)]
        xs.extend(cx[keep].tolist())
        ys.extend(cy[keep].tolist())
    return np.asarray(xs[:n]), np.asarray(ys[:n])


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridField) else np.asarray(f, dtype=float)


def _labelled(ev: EventSet, gen: int) -> EventSet:
    return EventSet(ev.t, ev.x, ev.y, np.full(ev.n, gen, dtype=np.int64), _sorted=True)


def _children(t, x, y, p: TriggerParams, domain: Domain, rng: np.random.Generator, counts=None):
    """Offspring of parents at arrays ``(t, x, y)``; returns child arrays and parent indices."""
    if counts is None:
        counts = rng.poisson(p.alpha, size=len(t))
    total = int(counts.sum())
    if total == 0:
        e = np.empty(0)
        return e, e, e, np.empty(0, dtype=np.int64)
    parent = np.repeat(np.arange(len(t)), counts)
    ct = t[parent] + rng.exponential(1.0 / p.beta, size=total)
    cx = x[parent] + rng.normal(0.0, math.sqrt(p.sigma_x2), size=total)
    cy = y[parent] + rng.normal(0.0, math.sqrt(p.sigma_y2), size=total)
    keep = (ct < domain.t_max) & domain.contains_space(cx, cy)
    return ct[keep], cx[keep], cy[keep], parent[keep]


def simulate_offspring(parent: Event, p: TriggerParams, domain: Domain, rng: np.random.Generator) -> EventSet:
    """Direct children of one event that land inside the window."""
    gen = 1 if parent.gen is None else parent.gen + 1
    if p is None or p.alpha == 0:
        return _labelled(EventSet.empty(), gen)
    ct, cx, cy, _ = _children(np.array([parent.t]), np.array([parent.x]), np.array([parent.y]), p, domain, rng)
    return _labelled(EventSet(ct, cx, cy), gen)


def draw_fields(config: SimConfig):
    """GP hyperparameters and fields for ``config`` (fixed fields take precedence)."""
    grid_t, grid_s = config.grids()
    rng = stream(config.seed, 1)
    gp_t, gp_s = config.gp_t, config.gp_s
    if config.hyperprior_t is not None:
        gp_t = config.hyperprior_t.draw(rng)
    if config.hyperprior_s is not None:
        gp_s = config.hyperprior_s.draw(rng)
    if config.f_t is not None:
        f_t = GridField(config.f_t)
    else:
        bt = precompute_basis(grid_t, gp_t, config.var_frac)
        f_t = sample_field(bt, rng.standard_normal(bt.rank))
    if config.f_s is not None:
        f_s = GridField(config.f_s)
    else:
        bs = precompute_basis(grid_s, gp_s, config.var_frac)
        f_s = sample_field(bs, rng.standard_normal(bs.rank))
    if len(f_t) != grid_t.size or len(f_s) != grid_s.size:
        raise ValueError("fixed field length does not match the configured grid")
    return gp_t, gp_s, f_t, f_s


def simulate(config: SimConfig) -> SimResult:
    """Simulate one realization; identical config and seed give identical output."""
    grid_t, grid_s = config.grids()
    kind = config.kind
    gp_t = gp_s = f_t = f_s = None
    if kind.has_gp:
        gp_t, gp_s, f_t, f_s = draw_fields(config)
    bg = simulate_background(
        f_t, f_s, config.a0, config.domain, stream(config.seed, 0),
        grid_t if f_t is not None else None, grid_s if f_s is not None else None,
        config.background_method,
    )
    parts = [bg]
    total = bg.n
    if kind.has_trigger and config.trigger.alpha > 0:
        p = config.trigger
        level = bg
        ell = 0
        while level.n:
            kids_t, kids_x, kids_y = [], [], []
            for i in range(level.n):
                rng = stream(config.seed, 2, ell, i)
                ct, cx, cy, _ = _children(level.t[i:i + 1], level.x[i:i + 1], level.y[i:i + 1], p, config.domain, rng)
                kids_t.append(ct)
                kids_x.append(cx)
                kids_y.append(cy)
            ell += 1
            level = _labelled(
                EventSet(np.concatenate(kids_t), np.concatenate(kids_x), np.concatenate(kids_y)), ell
            )
            total += level.n
            if total > MAX_EVENTS:
                raise RunawayCascadeError(f"more than {MAX_EVENTS} events; check stationarity (alpha < 1)")
            parts.append(level)
    events = parts[0]
    for part in parts[1:]:
        events = events.merge(part)
    return SimResult(events, config, grid_t, grid_s, f_t, f_s, gp_t, gp_s)


def ks_residual_test(events: EventSet, temporal_compensator) -> tuple[float, float]:
    """Time-rescaling goodness-of-fit test.

    Event times are mapped through the compensator; the gaps of the rescaled
    times are compared to Exp(1) with a one-sample Kolmogorov-Smirnov test.
    Returns ``(statistic, asymptotic p-value)``.
    """
    t = np.asarray(events.t if isinstance(events, EventSet) else events, dtype=float)
    if len(t) < 5:
        raise InsufficientEventsError(f"residual test needs at least 5 events, got {len(t)}")
    tau = np.asarray(temporal_compensator(t), dtype=float)
    gaps = np.diff(np.concatenate([[0.0], tau]))
    if np.any(gaps < -1e-12):
        raise ValueError("compensator must be nondecreasing")
    res = stats.kstest(gaps, "expon", method="asymp")
    return float(res.statistic), float(res.pvalue)
