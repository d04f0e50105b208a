"""Log-likelihood, log-posterior and analytic gradients of the Cox-Hawkes model.

Background rate ``exp(a0 + f_t(t) + f_s(x, y))`` with piecewise-constant GP
fields, plus exponential-Gaussian excitation from every strictly earlier
event.  The four model kinds share this code path; a kind simply switches
the GP fields and/or the excitation off.

Unconstrained coordinates are laid out as::

    [a0, log alpha, log beta, log sigma_x2, log sigma_y2, z_t..., z_s...]

with the trigger block absent when the kind has no excitation and the ``z``
blocks absent when it has no GP background.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.special import log_ndtr, ndtri

from .domain import Domain, EventSet, ModelKind, TriggerParams
from .gp import Grid1D, Grid2D, LowRankBasis
from .kernels import axis_mass, axis_mass_dlogvar

LOG_FLOOR = 1e-300
_LOG_2PI = math.log(2.0 * math.pi)
TRIGGER_NAMES = ("alpha", "beta", "sigma_x2", "sigma_y2")


@dataclass(frozen=True)
class Background:
    """Temporal and spatial grids with their low-rank GP generators."""

    grid_t: Grid1D
    basis_t: LowRankBasis
    grid_s: Grid2D
    basis_s: LowRankBasis

    @property
    def m_t(self) -> int:
        return self.basis_t.rank

    @property
    def m_s(self) -> int:
        return self.basis_s.rank

    def f_t(self, z_t) -> np.ndarray:
        return self.basis_t.basis @ np.asarray(z_t, dtype=float)

    def f_s(self, z_s) -> np.ndarray:
        return self.basis_s.basis @ np.asarray(z_s, dtype=float)


@dataclass(frozen=True, eq=False)
class ParamState:
    """Model parameters on the constrained scale.

    ``trigger`` is ``None`` for kinds without excitation; ``z_t``/``z_s`` are
    ``None`` for kinds with a constant background.
    """

    a0: float
    trigger: TriggerParams | None = None
    z_t: np.ndarray | None = None
    z_s: np.ndarray | None = None

    def __post_init__(self):
        for name in ("z_t", "z_s"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(-1))

    @property
    def has_gp(self) -> bool:
        return self.z_t is not None

    def background_rate_parts(self, background: Background | None):
        """``(exp f_t, exp f_s)`` on the grids, or ``(None, None)`` for a constant background."""
        if not self.has_gp:
            return None, None
        if background is None:
            raise ValueError("state carries GP coefficients but no background basis was given")
        return np.exp(background.f_t(self.z_t)), np.exp(background.f_s(self.z_s))


@dataclass(frozen=True)
class TruncNormal:
    """Normal(loc, scale) restricted to (0, inf)."""

    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("prior scale must be positive")

    def logpdf(self, v):
        z = (v - self.loc) / self.scale
        return -0.5 * z * z - math.log(self.scale) - 0.5 * _LOG_2PI - float(log_ndtr(self.loc / self.scale))

    def dlogpdf(self, v):
        return -(v - self.loc) / self.scale**2

    def median(self) -> float:
        lower = float(np.exp(log_ndtr(-self.loc / self.scale)))
        return self.loc + self.scale * float(ndtri(lower + 0.5 * (1.0 - lower)))


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("prior sd must be positive")

    def logpdf(self, v):
        z = (v - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * _LOG_2PI

    def dlogpdf(self, v):
        return -(v - self.mean) / self.sd**2


@dataclass(frozen=True)
class PriorSpec:
    a0: Normal = Normal(0.0, 2.0)
    alpha: TruncNormal = TruncNormal(0.0, 1.0)
    beta: TruncNormal = TruncNormal(0.0, 5.0)
    sigma_x2: TruncNormal = TruncNormal(0.0, 1.0)
    sigma_y2: TruncNormal = TruncNormal(0.0, 1.0)


# --- pairwise excitation ---------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _pair_sums(t, x, y, beta, inv2sx2, inv2sy2, cutoff):
    """Per-event sums over strictly earlier events of the unnormalized kernel.

    Returns ``S``, and ``S`` weighted by ``dt``, ``dx^2`` and ``dy^2``.
    Pairs with ``beta * dt > cutoff`` are skipped (events are time-sorted).
    """
    n = t.shape[0]
    S = np.zeros(n)
    St = np.zeros(n)
    Sx = np.zeros(n)
    Sy = np.zeros(n)
    for j in range(n):
        tj = t[j]
        xj = x[j]
        yj = y[j]
        s = 0.0
        st = 0.0
        sx = 0.0
        sy = 0.0
        for i in range(j - 1, -1, -1):
            dt = tj - t[i]
            if dt <= 0.0:
                continue
            a = beta * dt
            if a > cutoff:
                break
            dx = xj - x[i]
            dy = yj - y[i]
            dx2 = dx * dx
            dy2 = dy * dy
            k = math.exp(-a - dx2 * inv2sx2 - dy2 * inv2sy2)
            s += k
            st += k * dt
            sx += k * dx2
            sy += k * dy2
        S[j] = s
        St[j] = st
        Sx[j] = sx
        Sy[j] = sy
    return S, St, Sx, Sy


def _trigger_norm(p: TriggerParams) -> float:
    return p.alpha * p.beta / (2.0 * math.pi * math.sqrt(p.sigma_x2 * p.sigma_y2))


def excitation_sums(events: EventSet, p: TriggerParams, cutoff: float = math.inf) -> np.ndarray:
    """Total excitation at each event from all strictly earlier events."""
    S, _, _, _ = _pair_sums(
        events.t, events.x, events.y, p.beta, 0.5 / p.sigma_x2, 0.5 / p.sigma_y2, float(cutoff)
    )
    return _trigger_norm(p) * S


def trigger_compensator(events: EventSet, p: TriggerParams, domain: Domain) -> float:
    """Integrated excitation over the window, with exact edge correction."""
    tau = domain.t_max - events.t
    temporal = -np.expm1(-p.beta * tau)
    px = axis_mass(events.x, *domain.x_range, math.sqrt(p.sigma_x2))
    py = axis_mass(events.y, *domain.y_range, math.sqrt(p.sigma_y2))
    return float(p.alpha * np.sum(temporal * px * py))


def background_compensator(state: ParamState, background: Background | None, domain: Domain) -> float:
    et, es = state.background_rate_parts(background)
    if et is None:
        return math.exp(state.a0) * domain.volume
    return (
        math.exp(state.a0)
        * float(np.sum(et) * background.grid_t.cell_width)
        * float(np.sum(es) * background.grid_s.cell_area)
    )


def background_at(t, x, y, state: ParamState, background: Background | None):
    t = np.asarray(t, dtype=float)
    if not state.has_gp:
        return np.full(np.shape(t), math.exp(state.a0)) if np.ndim(t) else math.exp(state.a0)
    ft = background.f_t(state.z_t)[background.grid_t.index(t)]
    fs = background.f_s(state.z_s)[background.grid_s.index(x, y)]
    return np.exp(state.a0 + ft + fs)


def intensity_at(t, x, y, state: ParamState, history: EventSet, background: Background | None = None):
    """Conditional intensity at ``(t, x, y)`` given events strictly before ``t``.

    Accepts scalars or equal-shape arrays of query points.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    x_arr = np.broadcast_to(np.asarray(x, dtype=float), t_arr.shape)
    y_arr = np.broadcast_to(np.asarray(y, dtype=float), t_arr.shape)
    lam = np.asarray(background_at(t_arr, x_arr, y_arr, state, background), dtype=float).copy()
    p = state.trigger
    if p is not None and p.alpha > 0 and history.n:
        norm = _trigger_norm(p)
        chunk = max(1, 2_000_000 // max(history.n, 1))
        for lo in range(0, len(t_arr), chunk):
            sl = slice(lo, lo + chunk)
            dt = t_arr[sl, None] - history.t[None, :]
            dx = x_arr[sl, None] - history.x[None, :]
            dy = y_arr[sl, None] - history.y[None, :]
            arg = -p.beta * dt - dx * dx / (2 * p.sigma_x2) - dy * dy / (2 * p.sigma_y2)
            k = np.where(dt > 0, np.exp(np.where(dt > 0, arg, 0.0)), 0.0)
            lam[sl] += norm * k.sum(axis=1)
    if np.ndim(t) == 0:
        return float(lam[0])
    return lam


@dataclass
class LikelihoodTerms:
    value: float
    log_intensity_sum: float
    background_mass: float
    trigger_mass: float
    n_floored: int = 0


def log_likelihood_terms(
    events: EventSet,
    state: ParamState,
    background: Background | None,
    domain: Domain,
    cutoff: float = math.inf,
) -> LikelihoodTerms:
    events = events if isinstance(events, EventSet) else EventSet.from_events(events)
    lam = np.asarray(background_at(events.t, events.x, events.y, state, background), dtype=float)
    lam = np.broadcast_to(lam, events.t.shape).astype(float)
    p = state.trigger
    trig_mass = 0.0
    if p is not None and p.alpha > 0:
        if events.n:
            lam = lam + excitation_sums(events, p, cutoff)
        trig_mass = trigger_compensator(events, p, domain)
    n_floored = int(np.sum(lam < LOG_FLOOR))
    log_sum = float(np.sum(np.log(np.maximum(lam, LOG_FLOOR))))
    bg_mass = background_compensator(state, background, domain)
    return LikelihoodTerms(log_sum - bg_mass - trig_mass, log_sum, bg_mass, trig_mass, n_floored)


def log_likelihood(events, state: ParamState, background: Background | None, domain: Domain,
                   cutoff: float = math.inf) -> float:
    """Sum of log-intensities at the events minus the integrated intensity."""
    return log_likelihood_terms(events, state, background, domain, cutoff).value


def temporal_compensator(state: ParamState, events: EventSet, background: Background | None, domain: Domain):
    """Return ``Lambda(t)``: spatially integrated intensity accumulated over ``[0, t]``."""
    et, es = state.background_rate_parts(background)
    if et is None:
        rate_t = None
        spatial = domain.area
    else:
        grid = background.grid_t
        spatial = float(np.sum(es) * background.grid_s.cell_area)
        rate_t = et
        cum = np.concatenate([[0.0], np.cumsum(et) * grid.cell_width])
    p = state.trigger
    if p is not None and p.alpha > 0 and events.n:
        mass = axis_mass(events.x, *domain.x_range, math.sqrt(p.sigma_x2)) * axis_mass(
            events.y, *domain.y_range, math.sqrt(p.sigma_y2)
        )
    else:
        p = None

    def Lambda(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if rate_t is None:
            out = math.exp(state.a0) * spatial * t_arr
        else:
            tc = np.clip(t_arr, 0.0, grid.t_max)
            c = np.clip(np.floor(tc / grid.cell_width).astype(int), 0, grid.n_t - 1)
            out = math.exp(state.a0) * spatial * (cum[c] + rate_t[c] * (tc - grid.edges[c]))
            beyond = t_arr > grid.t_max
            out = out + math.exp(state.a0) * spatial * rate_t[-1] * np.where(beyond, t_arr - grid.t_max, 0.0)
        if p is not None:
            dt = t_arr[:, None] - events.t[None, :]
            out = out + p.alpha * np.sum(
                np.where(dt > 0, -np.expm1(-p.beta * np.maximum(dt, 0.0)), 0.0) * mass[None, :], axis=1
            )
        return out if np.ndim(t) else float(out[0])

    return Lambda


# --- posterior -------------------------------------------------------------

@dataclass
class Posterior:
    """Log-posterior over unconstrained coordinates for one data set and model kind.

    Precomputes event cell indices once; ``value_and_grad`` is the hot path used
    by the sampler.  The last evaluation is cached, so calling ``logp`` then
    ``grad`` at the same point costs one evaluation.
    """

    events: EventSet
    domain: Domain
    kind: ModelKind = ModelKind.COX_HAWKES
    priors: PriorSpec = field(default_factory=PriorSpec)
    background: Background | None = None
    cutoff: float = math.inf

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.kind.has_gp and self.background is None:
            raise ValueError(f"model kind {self.kind.value} needs a GP background")
        self.m_t = self.background.m_t if self.kind.has_gp else 0
        self.m_s = self.background.m_s if self.kind.has_gp else 0
        self.n_trig = 4 if self.kind.has_trigger else 0
        self.dim = 1 + self.n_trig + self.m_t + self.m_s
        self._zt = slice(1 + self.n_trig, 1 + self.n_trig + self.m_t)
        self._zs = slice(1 + self.n_trig + self.m_t, self.dim)
        ev = self.events
        self._t = np.ascontiguousarray(ev.t)
        self._x = np.ascontiguousarray(ev.x)
        self._y = np.ascontiguousarray(ev.y)
        if self.kind.has_gp:
            self._ct = self.background.grid_t.index(ev.t)
            self._cs = self.background.grid_s.index(ev.x, ev.y)
            self._Bt = np.asarray(self.background.basis_t.basis)
            self._Bs = np.asarray(self.background.basis_s.basis)
        # (key, value) in one tuple so concurrent chains never see a torn pair
        self._cache = None
        self.n_floored = 0

    # coordinate maps
    def names(self) -> list[str]:
        out = ["a0"]
        if self.kind.has_trigger:
            out += [f"log_{n}" for n in TRIGGER_NAMES]
        out += [f"z_t_{i}" for i in range(self.m_t)]
        out += [f"z_s_{i}" for i in range(self.m_s)]
        return out

    def unpack(self, u) -> ParamState:
        u = np.asarray(u, dtype=float)
        trig = None
        if self.kind.has_trigger:
            trig = TriggerParams(*np.exp(u[1:5]).tolist())
        z_t = z_s = None
        if self.kind.has_gp:
            z_t = u[self._zt].copy()
            z_s = u[self._zs].copy()
        return ParamState(float(u[0]), trig, z_t, z_s)

    def pack(self, state: ParamState) -> np.ndarray:
        u = np.empty(self.dim)
        u[0] = state.a0
        if self.kind.has_trigger:
            p = state.trigger
            u[1:5] = np.log([p.alpha, p.beta, p.sigma_x2, p.sigma_y2])
        if self.kind.has_gp:
            u[self._zt] = state.z_t
            u[self._zs] = state.z_s
        return u

    def initial_point(self) -> np.ndarray:
        """Method-of-moments intercept, trigger parameters at prior medians, ``z = 0``."""
        n = max(self.events.n, 1)
        a0 = math.log(n / self.domain.volume)
        trig = None
        if self.kind.has_trigger:
            pr = self.priors
            trig = TriggerParams(pr.alpha.median(), pr.beta.median(), pr.sigma_x2.median(), pr.sigma_y2.median())
        z_t = np.zeros(self.m_t) if self.kind.has_gp else None
        z_s = np.zeros(self.m_s) if self.kind.has_gp else None
        return self.pack(ParamState(a0, trig, z_t, z_s))

    # evaluation
    def value_and_grad(self, u):
        u = np.asarray(u, dtype=float)
        key = u.tobytes()
        cached = self._cache
        if cached is not None and cached[0] == key:
            return cached[1]
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                out = self._evaluate(u)
        except (OverflowError, ValueError, ZeroDivisionError):
            out = (-math.inf, np.zeros(self.dim))
        if not np.isfinite(out[0]) or not np.all(np.isfinite(out[1])):
            out = (-math.inf, np.zeros(self.dim))
        self._cache = (key, out)
        return out

    def logp(self, u) -> float:
        return self.value_and_grad(u)[0]

    def grad(self, u) -> np.ndarray:
        return self.value_and_grad(u)[1]

    __call__ = logp

    def _evaluate(self, u):
        g = np.zeros(self.dim)
        a0 = float(u[0])
        ea0 = math.exp(a0)
        n = self.events.n
        dom = self.domain

        # background
        if self.kind.has_gp:
            zt = u[self._zt]
            zs = u[self._zs]
            ft = self._Bt @ zt
            fs = self._Bs @ zs
            et = np.exp(ft)
            es = np.exp(fs)
            It = float(et.sum()) * self.background.grid_t.cell_width
            Is = float(es.sum()) * self.background.grid_s.cell_area
            bg = ea0 * et[self._ct] * es[self._cs]
            bg_mass = ea0 * It * Is
        else:
            bg = np.full(n, ea0)
            bg_mass = ea0 * dom.volume

        lam = bg
        lp = -bg_mass
        if self.kind.has_trigger:
            la, lb, lsx, lsy = u[1:5]
            alpha, beta, sx2, sy2 = math.exp(la), math.exp(lb), math.exp(lsx), math.exp(lsy)
            norm = alpha * beta / (2.0 * math.pi * math.sqrt(sx2 * sy2))
            if n:
                S, St, Sx, Sy = _pair_sums(self._t, self._x, self._y, beta, 0.5 / sx2, 0.5 / sy2, self.cutoff)
                exc = norm * S
                lam = bg + exc
            # compensator
            sx, sy = math.sqrt(sx2), math.sqrt(sy2)
            tau = dom.t_max - self._t
            e_bt = np.exp(-beta * tau)
            temporal = -np.expm1(-beta * tau)
            px = axis_mass(self._x, *dom.x_range, sx)
            py = axis_mass(self._y, *dom.y_range, sy)
            pxy = px * py
            trig_mass = alpha * float(np.dot(temporal, pxy))
            lp -= trig_mass

        floored = lam < LOG_FLOOR
        self.n_floored = int(np.count_nonzero(floored))
        lam_safe = np.maximum(lam, LOG_FLOOR)
        lp += float(np.sum(np.log(lam_safe)))
        w = 1.0 / lam_safe

        # gradient: intercept and GP coefficients
        wbg = w * bg
        g[0] = float(wbg.sum()) - bg_mass
        if self.kind.has_gp:
            gft = np.bincount(self._ct, weights=wbg, minlength=len(et)) - ea0 * et * self.background.grid_t.cell_width * Is
            gfs = np.bincount(self._cs, weights=wbg, minlength=len(es)) - ea0 * es * self.background.grid_s.cell_area * It
            g[self._zt] = self._Bt.T @ gft
            g[self._zs] = self._Bs.T @ gfs

        if self.kind.has_trigger:
            if n:
                g[1] = float(np.dot(w, exc))
                g[2] = float(np.dot(w, exc - beta * norm * St))
                g[3] = float(np.dot(w, -0.5 * exc + norm * Sx * (0.5 / sx2)))
                g[4] = float(np.dot(w, -0.5 * exc + norm * Sy * (0.5 / sy2)))
            g[1] -= trig_mass
            g[2] -= alpha * float(np.dot(beta * tau * e_bt, pxy))
            dpx = axis_mass_dlogvar(self._x, *dom.x_range, sx)
            dpy = axis_mass_dlogvar(self._y, *dom.y_range, sy)
            g[3] -= alpha * float(np.dot(temporal, dpx * py))
            g[4] -= alpha * float(np.dot(temporal, px * dpy))

        # priors (constrained scale) plus log-Jacobian of the exp transform
        pr = self.priors
        lp += pr.a0.logpdf(a0)
        g[0] += pr.a0.dlogpdf(a0)
        if self.kind.has_trigger:
            for k, (name, val) in enumerate(zip(TRIGGER_NAMES, (alpha, beta, sx2, sy2)), start=1):
                prior = getattr(pr, name)
                lp += prior.logpdf(val) + u[k]
                g[k] += prior.dlogpdf(val) * val + 1.0
        if self.kind.has_gp:
            lp += -0.5 * float(zt @ zt + zs @ zs) - 0.5 * _LOG_2PI * (self.m_t + self.m_s)
            g[self._zt] -= zt
            g[self._zs] -= zs
        return lp, g


def log_posterior(u, events, priors: PriorSpec, background: Background | None, domain: Domain,
                  kind: ModelKind = ModelKind.COX_HAWKES) -> float:
    return Posterior(events, domain, kind, priors, background).logp(u)


def grad_log_posterior(u, events, priors: PriorSpec, background: Background | None, domain: Domain,
                       kind: ModelKind = ModelKind.COX_HAWKES) -> np.ndarray:
    return Posterior(events, domain, kind, priors, background).grad(u)


def state_for_kind(state: ParamState, kind: ModelKind) -> ParamState:
    """Drop the parts of ``state`` that ``kind`` does not use."""
    kind = ModelKind(kind)
    out = state
    if not kind.has_trigger:
        out = replace(out, trigger=None)
    if not kind.has_gp:
        out = replace(out, z_t=None, z_s=None)
    return out
