import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from coxhawkes.domain import Domain, GPHyper, TriggerParams
from coxhawkes.kernels import (
    axis_mass, axis_mass_dlogvar, se_covariance, se_covariance_matrix, trigger_intensity,
    trigger_spatial_mass, trigger_temporal_mass,
)

P = TriggerParams(0.5, 0.7, 0.5, 0.3)


def test_trigger_intensity_value():
    v = trigger_intensity(1.0, 0.2, -0.1, P)
    want = 0.5 * 0.7 * math.exp(-0.7) * math.exp(-0.04 / 1.0 - 0.01 / 0.6) / (2 * math.pi * math.sqrt(0.15))
    assert v == pytest.approx(want, rel=1e-14)


def test_trigger_intensity_requires_positive_lag():
    with pytest.raises(ValueError):
        trigger_intensity(0.0, 0.0, 0.0, P)


def test_temporal_mass_matches_quadrature():
    q, _ = integrate.quad(lambda s: P.alpha * P.beta * math.exp(-P.beta * s), 0, 3.0)
    assert trigger_temporal_mass(2.0, 5.0, P) == pytest.approx(q, rel=1e-12)
    assert trigger_temporal_mass(2.0, math.inf, P) == pytest.approx(P.alpha, rel=1e-15)
    assert trigger_temporal_mass(2.0, 2.0, P) == 0.0
    with pytest.raises(ValueError):
        trigger_temporal_mass(3.0, 2.0, P)


def test_spatial_mass_matches_quadrature():
    d = Domain(1.0, (0, 1), (0, 2))
    q, _ = integrate.dblquad(
        lambda y, x: math.exp(-(x - 0.8) ** 2 / (2 * P.sigma_x2) - (y - 0.3) ** 2 / (2 * P.sigma_y2))
        / (2 * math.pi * math.sqrt(P.sigma_x2 * P.sigma_y2)),
        0, 1, 0, 2, epsabs=1e-13, epsrel=1e-12,
    )
    assert trigger_spatial_mass(0.8, 0.3, d, P) == pytest.approx(q, rel=1e-9)


def test_full_kernel_integrates_to_alpha_in_the_limit():
    far = Domain(1e3, (-1e3, 1e3), (-1e3, 1e3))
    total = trigger_temporal_mass(0.0, math.inf, P) * trigger_spatial_mass(0.0, 0.0, far, P)
    assert total == pytest.approx(P.alpha, rel=1e-15)


def test_axis_mass_dlogvar_matches_finite_difference():
    c, lo, hi, s2 = 0.3, 0.0, 1.0, 0.2
    h = 1e-6
    fd = (axis_mass(c, lo, hi, math.sqrt(s2 * math.exp(h))) - axis_mass(c, lo, hi, math.sqrt(s2 * math.exp(-h)))) / (2 * h)
    assert axis_mass_dlogvar(c, lo, hi, math.sqrt(s2)) == pytest.approx(fd, rel=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.05, 3.0), st.floats(0.01, 2.0), st.floats(-1.0, 2.0), st.floats(0.5, 5.0))
def test_mass_bounded_by_alpha_and_monotone(alpha, beta, s2, x, grow):
    p = TriggerParams(alpha, beta, s2, s2)
    d1 = Domain(1.0, (0, 1), (0, 1))
    d2 = Domain(1.0 + grow, (-grow, 1 + grow), (-grow, 1 + grow))
    m1 = trigger_temporal_mass(0.0, d1.t_max, p) * trigger_spatial_mass(x, 0.5, d1, p)
    m2 = trigger_temporal_mass(0.0, d2.t_max, p) * trigger_spatial_mass(x, 0.5, d2, p)
    assert 0.0 <= m1 <= m2 <= alpha * (1 + 1e-12)


def test_se_covariance():
    h = GPHyper(2.0, 3.0)
    assert se_covariance([0.0], [0.0], h) == pytest.approx(3.0)
    assert se_covariance([0.0, 0.0], [1.0, 1.0], h) == pytest.approx(3.0 * math.exp(-2.0 / 8.0))
    with pytest.raises(ValueError):
        se_covariance([0.0], [0.0, 1.0], h)
    pts = np.random.default_rng(0).random((7, 2))
    K = se_covariance_matrix(pts, pts, h)
    assert np.allclose(K, K.T)
    assert np.linalg.eigvalsh(K).min() > -1e-10
    assert K[2, 5] == pytest.approx(se_covariance(pts[2], pts[5], h), rel=1e-14)


def test_mass_deficit_matches_temporal_tail():
    # at r lengthscales the shortfall is 1 - (1 - e^-r)(1 - 2 Phi(-r))^2 of alpha
    from scipy.stats import norm
    p = TriggerParams(0.5, 0.7, 0.5, 0.5)
    for r in (5.0, 10.0, 15.0, 20.0):
        h = r * math.sqrt(p.sigma_x2)
        d = Domain(r / p.beta, (-h, h), (-h, h))
        mass = trigger_temporal_mass(0.0, d.t_max, p) * trigger_spatial_mass(0.0, 0.0, d, p)
        kept = math.log1p(-math.exp(-r)) + 2 * math.log1p(-2 * norm.sf(r))
        assert p.alpha - mass == pytest.approx(-p.alpha * math.expm1(kept), rel=1e-6)
