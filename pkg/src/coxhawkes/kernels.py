"""Closed-form triggering kernel, its integrals, and the squared-exponential covariance."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .domain import Domain, GPHyper, TriggerParams

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def trigger_intensity(dt, dx, dy, p: TriggerParams):
    """Rate added at lag ``(dt, dx, dy)`` by one past event.

    Exponential decay in time times a bivariate normal density in space with
    covariance ``diag(sigma_x2, sigma_y2)``; integrates to ``alpha``.
    """
    dt = np.asarray(dt, dtype=float)
    if np.any(dt <= 0):
        raise ValueError("trigger_intensity requires dt > 0")
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    norm = p.alpha * p.beta / (2.0 * math.pi * math.sqrt(p.sigma_x2 * p.sigma_y2))
    val = norm * np.exp(-p.beta * dt - dx * dx / (2.0 * p.sigma_x2) - dy * dy / (2.0 * p.sigma_y2))
    return val if val.ndim else float(val)


def trigger_temporal_mass(t_i, t_end, p: TriggerParams):
    """Integral of the temporal factor from ``t_i`` to ``t_end``: ``alpha (1 - exp(-beta tau))``."""
    tau = np.asarray(t_end, dtype=float) - np.asarray(t_i, dtype=float)
    if np.any(tau < 0):
        raise ValueError("t_end must not precede t_i")
    val = p.alpha * -np.expm1(-p.beta * tau)
    return val if np.ndim(val) else float(val)


def axis_mass(center, lo: float, hi: float, sigma: float):
    """Probability that ``N(center, sigma^2)`` falls in ``[lo, hi]``."""
    c = np.asarray(center, dtype=float)
    s = _SQRT2 * sigma
    return 0.5 * (erf((hi - c) / s) - erf((lo - c) / s))


def axis_mass_dlogvar(center, lo: float, hi: float, sigma: float):
    """Derivative of :func:`axis_mass` with respect to ``log(sigma^2)``."""
    c = np.asarray(center, dtype=float)
    ub = (hi - c) / sigma
    ua = (lo - c) / sigma
    return -0.5 * _INV_SQRT_2PI * (ub * np.exp(-0.5 * ub * ub) - ua * np.exp(-0.5 * ua * ua))


def trigger_spatial_mass(x_i, y_i, domain: Domain, p: TriggerParams):
    """Share of an event's spatial kernel that lies inside the rectangle."""
    px = axis_mass(x_i, *domain.x_range, math.sqrt(p.sigma_x2))
    py = axis_mass(y_i, *domain.y_range, math.sqrt(p.sigma_y2))
    val = px * py
    return val if np.ndim(val) else float(val)


def se_covariance(u, v, h: GPHyper):
    """Squared-exponential covariance between two points (or stacks of points).

    ``u`` and ``v`` are arrays whose last axis is the coordinate dimension;
    scalars are treated as 1-D points.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    d2 = np.sum((u - v) ** 2, axis=-1)
    val = h.variance * np.exp(-0.5 * d2 / h.length_scale**2)
    return val if np.ndim(val) else float(val)


def se_covariance_matrix(a, b, h: GPHyper) -> np.ndarray:
    """Pairwise covariance matrix between point sets ``a`` (n, D) and ``b`` (m, D)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return h.variance * np.exp(-0.5 * d2 / h.length_scale**2)
