"""Forward prediction from posterior draws, RMSE scoring and the misspecification study."""

from __future__ import annotations

import functools
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import Domain, EventSet, GPHyper, ModelKind
from .gp import Grid1D, Grid2D, precompute_basis
from .inference import McmcConfig, fit
from .likelihood import Background, ParamState, PriorSpec
from .simulate import MAX_EVENTS, RunawayCascadeError, SimConfig, _children, simulate, stream

log = logging.getLogger(__name__)


class HorizonExhaustedError(RuntimeError):
    """The prediction window reached its cap before ``k`` events occurred."""


def derive_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


class _Pool:
    """Simulated future events; only the ``k`` earliest can matter."""

    def __init__(self, k: int):
        self.k = k
        self.t = np.empty(0)
        self.x = np.empty(0)
        self.y = np.empty(0)
        self.total = 0

    def cut(self) -> float:
        if len(self.t) < self.k:
            return math.inf
        return float(np.partition(self.t, self.k - 1)[self.k - 1])

    def add(self, t, x, y) -> None:
        self.t = np.concatenate([self.t, t])
        self.x = np.concatenate([self.x, x])
        self.y = np.concatenate([self.y, y])
        self.total += len(t)
        if self.total > MAX_EVENTS:
            raise RunawayCascadeError("prediction cascade exceeded the event cap")
        if len(self.t) > 4 * self.k:
            keep = self.t <= self.cut()
            self.t, self.x, self.y = self.t[keep], self.x[keep], self.y[keep]

    def cascade(self, t, x, y, p, space: Domain, rng) -> None:
        """Add events and all their descendants (unbounded in time, clipped in space)."""
        unbounded = _Unbounded(space)
        while len(t):
            self.add(t, x, y)
            # a descendant is later than its ancestor, so anything past the
            # current k-th earliest time cannot enter the first k
            keep = t <= self.cut()
            t, x, y, _ = _children(t[keep], x[keep], y[keep], p, unbounded, rng)


@dataclass(frozen=True)
class _Unbounded:
    """Spatial region with no time limit, for offspring draws past the window."""

    space: Domain
    t_max: float = math.inf

    def contains_space(self, x, y):
        return self.space.contains_space(x, y)


def _background_sampler(state: ParamState, background: Background | None, domain: Domain):
    """Rate per unit time past the window and a spatial location sampler."""
    if state.has_gp:
        # temporal field frozen at its last cell
        ft_last = float(background.f_t(state.z_t)[-1])
        fs = background.f_s(state.z_s)
        ws = np.exp(fs - fs.max())
        rate = math.exp(state.a0 + ft_last + fs.max()) * ws.sum() * background.grid_s.cell_area
        grid = background.grid_s
        probs = ws / ws.sum()

        def locate(n, rng):
            cs = rng.choice(grid.size, size=n, p=probs)
            x0, x1, y0, y1 = grid.cell_bounds(cs)
            return x0 + rng.random(n) * (x1 - x0), y0 + rng.random(n) * (y1 - y0)
    else:
        rate = math.exp(state.a0) * domain.area
        (xa, xb), (ya, yb) = domain.x_range, domain.y_range

        def locate(n, rng):
            return xa + rng.random(n) * (xb - xa), ya + rng.random(n) * (yb - ya)

    return rate, locate


def predict_next_events(history: EventSet, state: ParamState, k: int, background: Background | None,
                        domain: Domain, rng: np.random.Generator, width: float | None = None,
                        max_doublings: int = 12) -> EventSet:
    """First ``k`` events after ``domain.t_max`` simulated forward from ``state``.

    ``domain`` is the training window.  Offspring of the history that land
    after it are drawn first (exponential delays are memoryless), then
    background events segment by segment on ``(T, T + w]``, ``(T + w, T + 3w]``,
    ... with doubling widths; every new event spawns its full cascade.  The
    first ``k`` events are final once they all precede the current segment
    end, so the result does not depend on the segmentation.
    """
    if k == 0:
        return EventSet.empty()
    if k < 0:
        raise ValueError("k must be nonnegative")
    T = domain.t_max
    rate, locate = _background_sampler(state, background, domain)
    if width is None:
        width = min(2.0 * k / max(rate, 1e-12), 1e6 * T)
    pool = _Pool(k)
    p = state.trigger
    excite = p is not None and p.alpha > 0

    if excite and history.n:
        # remaining children of each observed event, shifted past T
        counts = rng.poisson(p.alpha * np.exp(-p.beta * (T - history.t)))
        parent = np.repeat(np.arange(history.n), counts)
        ct = T + rng.exponential(1.0 / p.beta, len(parent))
        cx = history.x[parent] + rng.normal(0.0, math.sqrt(p.sigma_x2), len(parent))
        cy = history.y[parent] + rng.normal(0.0, math.sqrt(p.sigma_y2), len(parent))
        inside = domain.contains_space(cx, cy)
        pool.cascade(ct[inside], cx[inside], cy[inside], p, domain, rng)

    lo = T
    for _ in range(max_doublings + 1):
        hi = lo + width
        n_bg = int(rng.poisson(rate * width))
        bt = lo + rng.random(n_bg) * width
        bx, by = locate(n_bg, rng)
        if excite:
            pool.cascade(bt, bx, by, p, domain, rng)
        else:
            pool.add(bt, bx, by)
        if np.count_nonzero(pool.t <= hi) >= k:
            order = np.argsort(pool.t, kind="stable")[:k]
            return EventSet(pool.t[order], pool.x[order], pool.y[order], _sorted=True)
        lo, width = hi, 2.0 * width
    raise HorizonExhaustedError(f"fewer than {k} events before t={lo:g}")


def rmse(predicted: EventSet, actual: EventSet, scales=(1.0, 1.0, 1.0)) -> float:
    """Root mean squared standardized distance between rank-paired events.

    The j-th predicted event (in time order) is paired with the j-th actual
    one; time and the two coordinates are divided by ``scales`` before the
    squared Euclidean distance is averaged over pairs.
    """
    if predicted.n != actual.n:
        raise ValueError(f"length mismatch: {predicted.n} predicted vs {actual.n} actual")
    if predicted.n == 0:
        return 0.0
    st, sx, sy = scales
    d2 = ((predicted.t - actual.t) / st) ** 2 + ((predicted.x - actual.x) / sx) ** 2 + (
        (predicted.y - actual.y) / sy
    ) ** 2
    return float(math.sqrt(np.mean(d2)))


def train_test_split(events: EventSet, domain: Domain, train_frac: float = 0.8):
    t_split = train_frac * domain.t_max
    return events.before(t_split), events.after(t_split), domain.with_t_max(t_split)


def thin_draws(states: list, n: int) -> list:
    if len(states) <= n:
        return list(states)
    idx = np.linspace(0, len(states) - 1, n).round().astype(int)
    return [states[i] for i in idx]


@functools.lru_cache(maxsize=64)
def cached_background(t_max: float, x_range, y_range, n_t: int, n_x: int, n_y: int,
                      gp_t: GPHyper, gp_s: GPHyper, var_frac: float) -> Background:
    gt = Grid1D(t_max, n_t)
    gs = Grid2D(x_range, y_range, n_x, n_y)
    return Background(gt, precompute_basis(gt, gp_t, var_frac), gs, precompute_basis(gs, gp_s, var_frac))


@dataclass(frozen=True)
class ExperimentConfig:
    generators: dict  # generator kind name -> SimConfig (its seed is replaced per data set)
    inference_kinds: tuple = tuple(k.value for k in ModelKind)
    n_datasets: int = 10
    n_predictions: int = 50
    k: int = 10
    train_frac: float = 0.8
    n_draws: int = 50
    mcmc: McmcConfig = McmcConfig(n_chains=1, n_samples=600, n_warmup=300, n_leapfrog=16, adapt_mass=True)
    priors: PriorSpec = PriorSpec()
    gp_t: GPHyper = GPHyper(10.0, 1.0)
    gp_s: GPHyper = GPHyper(0.25, 1.0)
    n_t: int = 50
    n_x: int = 25
    n_y: int = 25
    var_frac: float = 0.99
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.generators:
            raise ValueError("at least one generator is required")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must lie in (0, 1)")
        for kind in self.inference_kinds:
            ModelKind(kind)
        for kind in self.generators:
            ModelKind(kind)


@dataclass
class CellResult:
    errors: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.errors)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors)) if self.errors else float("nan")

    @property
    def se(self) -> float:
        if len(self.errors) < 2:
            return float("nan")
        return float(np.std(self.errors, ddof=1) / math.sqrt(len(self.errors)))


@dataclass
class ExperimentReport:
    generators: list
    inference_kinds: list
    cells: dict  # (generator, inference) -> CellResult

    def mean_table(self) -> np.ndarray:
        return np.array([[self.cells[g, i].mean for i in self.inference_kinds] for g in self.generators])

    def table_rows(self) -> list[list[str]]:
        rows = [["generator", *self.inference_kinds]]
        for g in self.generators:
            row = [g]
            for i in self.inference_kinds:
                c = self.cells[g, i]
                row.append(f"{c.mean:.17g} ({c.se:.17g})")
            rows.append(row)
        return rows

    def long_rows(self) -> list[list]:
        rows = [["generator", "inference", "mean_rmse", "se", "n", "n_failures"]]
        for g in self.generators:
            for i in self.inference_kinds:
                c = self.cells[g, i]
                rows.append([g, i, f"{c.mean:.17g}", f"{c.se:.17g}", c.n, len(c.failures)])
        return rows

    def ranks(self, generator: str) -> list[str]:
        """Inference kinds of one row, best (lowest mean RMSE) first."""
        return sorted(self.inference_kinds, key=lambda i: self.cells[generator, i].mean)


def _dataset_cell(cfg: ExperimentConfig, gi: int, gen_kind: str, d: int, inf_kind: str,
                  train: EventSet, test: EventSet, train_domain: Domain) -> dict:
    kind = ModelKind(inf_kind)
    background = None
    if kind.has_gp:
        background = cached_background(
            train_domain.t_max, train_domain.x_range, train_domain.y_range,
            cfg.n_t, cfg.n_x, cfg.n_y, cfg.gp_t, cfg.gp_s, cfg.var_frac,
        )
    mcmc = replace(cfg.mcmc, seed=derive_seed(cfg.seed, 13, gi, d, list(ModelKind).index(kind)))
    samples = fit(train, kind, cfg.priors, background, mcmc, train_domain, cfg.threads)
    draws = thin_draws(samples.states(), cfg.n_draws)
    actual = test.select(np.arange(cfg.k))
    scales = (train_domain.t_max, train_domain.x_range[1] - train_domain.x_range[0],
              train_domain.y_range[1] - train_domain.y_range[0])
    errors = []
    for r in range(cfg.n_predictions):
        # same stream for every inference kind: common random numbers across the row
        rng = stream(cfg.seed, 12, gi, d, r)
        pred = predict_next_events(train, draws[r % len(draws)], cfg.k, background, train_domain, rng)
        errors.append(rmse(pred, actual, scales))
    return {"errors": errors, "accept_rate": samples.accept_rate, "n_divergent": samples.n_divergent}


def run_misspecification_experiment(cfg: ExperimentConfig, checkpoint_dir=None,
                                    stamp: dict | None = None) -> ExperimentReport:
    """Simulate under each generator, fit every inference kind, predict and score.

    With ``checkpoint_dir`` each (generator, data set, inference kind) result is
    written to its own JSON file and reused on a later call.  ``stamp`` entries
    are stored in every checkpoint; a checkpoint whose stamp differs is redone.
    """
    stamp = dict(stamp or {})
    gens = list(cfg.generators)
    kinds = list(cfg.inference_kinds)
    cells = {(g, i): CellResult() for g in gens for i in kinds}
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    for gi, g in enumerate(gens):
        base: SimConfig = cfg.generators[g]
        for d in range(cfg.n_datasets):
            sim = simulate(replace(base, seed=derive_seed(cfg.seed, 11, gi, d)))
            train, test, train_domain = train_test_split(sim.events, base.domain, cfg.train_frac)
            for inf in kinds:
                path = None
                if checkpoint_dir is not None:
                    path = os.path.join(checkpoint_dir, f"cell_{g}_{d:04d}_{inf}.json")
                    if os.path.exists(path):
                        with open(path) as fh:
                            done = json.load(fh)
                        if all(done.get(k) == v for k, v in stamp.items()):
                            _absorb(cells[g, inf], done)
                            continue
                if test.n < cfg.k:
                    done = {"failure": f"dataset {d}: only {test.n} test events (< k={cfg.k})"}
                else:
                    try:
                        done = _dataset_cell(cfg, gi, g, d, inf, train, test, train_domain)
                    except Exception as exc:  # recorded per cell, never fatal
                        log.warning("generator %s dataset %d inference %s failed: %s", g, d, inf, exc)
                        done = {"failure": f"dataset {d}: {type(exc).__name__}: {exc}"}
                _absorb(cells[g, inf], done)
                if path is not None:
                    with open(path, "w") as fh:
                        json.dump({**stamp, **done}, fh, sort_keys=True)
                log.info("generator %s dataset %d inference %s done", g, d, inf)
    return ExperimentReport(gens, kinds, cells)


def _absorb(cell: CellResult, done: dict) -> None:
    if "failure" in done:
        cell.failures.append(done["failure"])
    else:
        cell.errors.extend(done["errors"])
