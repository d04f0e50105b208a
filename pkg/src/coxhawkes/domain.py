"""Core data types shared by every module: events, observation window, parameters."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class EventError(ValueError):
    """Raised when an event set is malformed or lies outside its domain."""


class ModelKind(str, enum.Enum):
    COX_HAWKES = "cox_hawkes"
    HAWKES_CONST_BG = "hawkes_const_bg"
    LGCP = "lgcp"
    POISSON = "poisson"

    @property
    def has_gp(self) -> bool:
        return self in (ModelKind.COX_HAWKES, ModelKind.LGCP)

    @property
    def has_trigger(self) -> bool:
        return self in (ModelKind.COX_HAWKES, ModelKind.HAWKES_CONST_BG)


@dataclass(frozen=True)
class Domain:
    """Observation window ``[0, t_max] x x_range x y_range``."""

    t_max: float
    x_range: tuple[float, float] = (0.0, 1.0)
    y_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (math.isfinite(self.t_max) and self.t_max > 0):
            raise ValueError(f"t_max must be positive and finite, got {self.t_max}")
        for name, (lo, hi) in (("x_range", self.x_range), ("y_range", self.y_range)):
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"{name} must be a finite interval of positive length, got {(lo, hi)}")
        object.__setattr__(self, "x_range", (float(self.x_range[0]), float(self.x_range[1])))
        object.__setattr__(self, "y_range", (float(self.y_range[0]), float(self.y_range[1])))
        object.__setattr__(self, "t_max", float(self.t_max))

    @property
    def area(self) -> float:
        return (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])

    @property
    def volume(self) -> float:
        return self.t_max * self.area

    def contains_space(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (
            (x >= self.x_range[0]) & (x <= self.x_range[1])
            & (y >= self.y_range[0]) & (y <= self.y_range[1])
        )

    def with_t_max(self, t_max: float) -> "Domain":
        return Domain(t_max, self.x_range, self.y_range)


@dataclass(frozen=True)
class Event:
    t: float
    x: float
    y: float
    gen: int | None = None


@dataclass(frozen=True, eq=False)
class EventSet:
    """Time-ordered events stored column-wise.

    Sorting is stable, so events with equal times keep their insertion order.
    ``gen`` is ``None`` when generation labels are unknown.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    gen: np.ndarray | None = None
    _sorted: bool = field(default=False, repr=False)

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if not (len(t) == len(x) == len(y)):
            raise EventError("t, x, y must have equal length")
        gen = None
        if self.gen is not None:
            gen = np.array(self.gen, dtype=np.int64).reshape(-1)
            if len(gen) != len(t):
                raise EventError("gen must have the same length as t")
        if not self._sorted:
            order = np.argsort(t, kind="stable")
            t, x, y = t[order], x[order], y[order]
            if gen is not None:
                gen = gen[order]
        for arr in (t, x, y):
            arr.setflags(write=False)
        if gen is not None:
            gen.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "gen", gen)
        object.__setattr__(self, "_sorted", True)

    @classmethod
    def empty(cls) -> "EventSet":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_events(cls, events) -> "EventSet":
        events = list(events)
        if not events:
            return cls.empty()
        gens = [e.gen for e in events]
        gen = None if any(g is None for g in gens) else gens
        return cls([e.t for e in events], [e.x for e in events], [e.y for e in events], gen)

    @property
    def n(self) -> int:
        return len(self.t)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i) -> Event:
        gen = None if self.gen is None else int(self.gen[i])
        return Event(float(self.t[i]), float(self.x[i]), float(self.y[i]), gen)

    def __eq__(self, other):
        if not isinstance(other, EventSet):
            return NotImplemented
        same_gen = (self.gen is None and other.gen is None) or (
            self.gen is not None and other.gen is not None and np.array_equal(self.gen, other.gen)
        )
        return (
            np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and same_gen
        )

    def select(self, mask) -> "EventSet":
        mask = np.asarray(mask)
        gen = None if self.gen is None else self.gen[mask]
        return EventSet(self.t[mask], self.x[mask], self.y[mask], gen, _sorted=True)

    def before(self, t: float) -> "EventSet":
        """Events with time strictly less than ``t``."""
        return self.select(self.t < t)

    def after(self, t: float) -> "EventSet":
        """Events with time at or after ``t``."""
        return self.select(self.t >= t)

    def shift_time(self, dt: float) -> "EventSet":
        return EventSet(self.t + dt, self.x, self.y, self.gen, _sorted=True)

    def merge(self, other: "EventSet") -> "EventSet":
        gen = None
        if self.gen is not None and other.gen is not None:
            gen = np.concatenate([self.gen, other.gen])
        return EventSet(
            np.concatenate([self.t, other.t]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            gen,
        )


@dataclass(frozen=True)
class TriggerParams:
    """Excitation kernel parameters: branching factor, decay rate, spatial variances."""

    alpha: float
    beta: float
    sigma_x2: float
    sigma_y2: float

    def __post_init__(self):
        for name in ("alpha", "beta", "sigma_x2", "sigma_y2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        for name in ("beta", "sigma_x2", "sigma_y2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def is_stationary(self) -> bool:
        return self.alpha < 1.0


@dataclass(frozen=True)
class GPHyper:
    """Squared-exponential GP hyperparameters."""

    length_scale: float
    variance: float = 1.0
    mean: float = 0.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")


def branching_ratio(p: TriggerParams) -> float:
    """Expected number of direct offspring per event over unbounded space-time.

    The temporal factor integrates to ``alpha`` and the spatial factor is a
    normalized Gaussian density, so the ratio is exactly ``alpha``.
    """
    return float(p.alpha)


def validate_events(events: EventSet, domain: Domain) -> EventSet:
    """Check that every event is finite and inside ``domain``; return it sorted."""
    if not isinstance(events, EventSet):
        events = EventSet.from_events(events)
    for name in ("t", "x", "y"):
        arr = getattr(events, name)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            i = int(bad[0])
            raise EventError(f"non-finite {name} in event {i}: {events[i]}")
    bad_t = np.flatnonzero((events.t < 0) | (events.t > domain.t_max))
    if bad_t.size:
        i = int(bad_t[0])
        raise EventError(
            f"event outside time window [0, {domain.t_max}] at index {i}: "
            f"t={float(events.t[i])!r}, x={float(events.x[i])!r}, y={float(events.y[i])!r}"
        )
    bad_s = np.flatnonzero(~domain.contains_space(events.x, events.y))
    if bad_s.size:
        i = int(bad_s[0])
        raise EventError(
            f"event outside spatial region at index {i}: "
            f"t={float(events.t[i])!r}, x={float(events.x[i])!r}, y={float(events.y[i])!r}"
        )
    if events.gen is not None and np.any(events.gen < 0):
        raise EventError("generation labels must be nonnegative")
    return events
