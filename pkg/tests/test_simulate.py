import math

import numpy as np
import pytest
from scipy import stats

from coxhawkes.domain import Domain, Event, EventSet, TriggerParams
from coxhawkes.gp import Grid1D, Grid2D
from coxhawkes.simulate import (
    HyperPrior, InsufficientEventsError, SimConfig, ks_residual_test, simulate, simulate_background,
    simulate_offspring, stream,
)

from conftest import EXP1_TRIGGER, GP_S, GP_T


def test_same_seed_same_events():
    cfg = SimConfig(Domain(50.0), "cox_hawkes", 0.8, EXP1_TRIGGER, GP_T, GP_S, seed=7)
    a, b = simulate(cfg), simulate(cfg)
    assert a.events == b.events
    assert np.array_equal(a.f_t.values, b.f_t.values)
    from dataclasses import replace
    assert simulate(replace(cfg, seed=8)).events != a.events


def test_config_validation():
    d = Domain(10.0)
    with pytest.raises(ValueError, match="requires trigger"):
        SimConfig(d, "cox_hawkes", 0.8, None, GP_T, GP_S)
    with pytest.raises(ValueError, match="stationary"):
        SimConfig(d, "hawkes_const_bg", 0.8, TriggerParams(1.0, 1.0, 0.1, 0.1))
    with pytest.raises(ValueError, match="gp_t"):
        SimConfig(d, "lgcp", 0.8)
    with pytest.raises(ValueError):
        SimConfig(d, "poisson", 0.0, background_method="grid")


def test_poisson_count_mean():
    d = Domain(50.0)
    counts = [simulate(SimConfig(d, "poisson", math.log(2.0), seed=s)).events.n for s in range(300)]
    se = math.sqrt(100.0 / 300)
    assert abs(np.mean(counts) - 100.0) < 3 * se


def test_poisson_events_uniform():
    d = Domain(50.0)
    ev = simulate(SimConfig(d, "poisson", math.log(20.0), seed=1)).events
    for arr, scale in ((ev.t, 50.0), (ev.x, 1.0), (ev.y, 1.0)):
        assert stats.kstest(arr / scale, "uniform").pvalue > 0.001


def test_background_methods_agree():
    d = Domain(10.0)
    gt, gs = Grid1D(10.0, 5), Grid2D((0, 1), (0, 1), 3, 3)
    ft = np.array([0.0, 1.0, -1.0, 0.5, 0.0])
    fs = np.linspace(-1, 1, 9)
    a = simulate_background(ft, fs, 3.0, d, stream(0, 0), gt, gs, "categorical")
    b = simulate_background(ft, fs, 3.0, d, stream(1, 0), gt, gs, "rejection")
    assert stats.ks_2samp(a.t, b.t).pvalue > 0.001
    assert stats.ks_2samp(a.x, b.x).pvalue > 0.001
    mass = math.exp(3.0) * np.exp(ft).sum() * 2.0 * np.exp(fs).sum() / 9
    assert abs(a.n - mass) < 4 * math.sqrt(mass)
    # cell occupancy follows the field
    occ = np.bincount(gt.index(a.t), minlength=5)
    assert stats.chisquare(occ, a.n * np.exp(ft) / np.exp(ft).sum()).pvalue > 0.001


def test_offspring_moments():
    p = TriggerParams(0.8, 2.0, 0.04, 0.09)
    big = Domain(1e6, (-1e3, 1e3), (-1e3, 1e3))
    rng = np.random.default_rng(0)
    kids = [simulate_offspring(Event(0.0, 0.0, 0.0, 0), p, big, rng) for _ in range(20000)]
    counts = np.array([k.n for k in kids])
    assert abs(counts.mean() - 0.8) < 3 * math.sqrt(0.8 / 20000)
    allk = EventSet(np.concatenate([k.t for k in kids]), np.concatenate([k.x for k in kids]),
                    np.concatenate([k.y for k in kids]))
    assert stats.kstest(allk.t, "expon", args=(0, 0.5)).pvalue > 0.001
    assert allk.x.var() == pytest.approx(0.04, rel=0.05)
    assert allk.y.var() == pytest.approx(0.09, rel=0.05)
    assert all(k.gen is None or np.all(k.gen == 1) for k in kids)


def test_children_outside_window_are_dropped():
    p = TriggerParams(0.9, 0.01, 1.0, 1.0)
    d = Domain(1.0)
    rng = np.random.default_rng(1)
    for _ in range(200):
        k = simulate_offspring(Event(0.99, 0.5, 0.5, 0), p, d, rng)
        assert np.all(k.t < 1.0) and np.all(d.contains_space(k.x, k.y))


def test_generation_labels_and_branching_ratio():
    p = TriggerParams(0.5, 5.0, 0.01, 0.01)
    d = Domain(200.0, (-50, 50), (-50, 50))
    bg = off = 0
    for s in range(20):
        res = simulate(SimConfig(d, "hawkes_const_bg", math.log(1.0 / d.area), p, seed=s))
        assert res.n_background + res.n_offspring == res.events.n
        assert res.events.gen.min() == 0
        bg += res.n_background
        off += res.n_offspring
    # expected offspring per background event: alpha / (1 - alpha)
    assert off / bg == pytest.approx(1.0, rel=0.15)


def test_hyperprior_draws_are_seeded():
    hp = HyperPrior(3.0, 20.0)
    a = hp.draw(stream(3, 1))
    b = hp.draw(stream(3, 1))
    assert a == b and a.length_scale > 0


def test_ks_residual_needs_events():
    with pytest.raises(InsufficientEventsError):
        ks_residual_test(EventSet([1.0, 2.0], [0.1, 0.2], [0.1, 0.2]), lambda t: t)


def test_ks_residual_on_homogeneous_process():
    d = Domain(100.0)
    ev = simulate(SimConfig(d, "poisson", math.log(3.0), seed=4)).events
    stat, p = ks_residual_test(ev, lambda t: 3.0 * np.asarray(t))
    assert p > 0.01
    stat, p = ks_residual_test(ev, lambda t: 30.0 * np.asarray(t))
    assert p < 1e-6


def test_true_compensator_total_matches_expected_count():
    cfg = SimConfig(Domain(50.0), "cox_hawkes", 0.8, EXP1_TRIGGER, GP_T, GP_S, seed=3)
    res = simulate(cfg)
    L = res.true_compensator()
    assert L(0.0) == 0.0
    ts = np.linspace(0.0, 50.0, 51)
    assert np.all(np.diff(L(ts)) >= 0)
    # background part alone equals the quadrature mass of the realized rate
    bg_only = simulate(SimConfig(Domain(50.0), "lgcp", 0.8, None, GP_T, GP_S, seed=3))
    rate = np.exp(0.8 + bg_only.f_t.values[:, None] + bg_only.f_s.values[None, :])
    mass = rate.sum() * bg_only.grid_t.cell_width * bg_only.grid_s.cell_area
    assert bg_only.true_compensator()(50.0) == pytest.approx(mass, rel=1e-12)
    stat, p = ks_residual_test(res.events, L)
    assert p > 1e-4
