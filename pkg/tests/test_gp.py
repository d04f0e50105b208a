import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coxhawkes.domain import GPHyper
from coxhawkes.gp import (
    Grid1D, Grid2D, GridField, build_covariance, field_at, field_integral, field_rows, load_basis,
    precompute_basis, sample_field, save_basis,
)

GP_T = GPHyper(10.0, 1.0)
GP_S = GPHyper(0.25, 1.0)


def test_grid1d_cells():
    g = Grid1D(50.0, 50)
    assert g.cell_width == 1.0
    assert g.edges[0] == 0.0 and g.edges[-1] == 50.0
    assert g.index([0.0, 0.5, 1.0, 49.99, 50.0]).tolist() == [0, 0, 0, 49, 49]
    with pytest.raises(ValueError):
        g.index(50.1)


def test_grid2d_row_major_and_bounds():
    g = Grid2D((0, 1), (0, 2), 4, 5)
    assert g.size == 20
    assert g.cell_area == pytest.approx(0.25 * 0.4)
    idx = g.index(0.6, 1.3)
    assert idx == 2 * 5 + 3
    x0, x1, y0, y1 = g.cell_bounds(idx)
    assert (x0, x1) == pytest.approx((0.5, 0.75)) and (y0, y1) == pytest.approx((1.2, 1.6))
    assert np.allclose(g.centers[idx], [0.625, 1.4])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_grid2d_point_lies_in_its_cell(x, y):
    g = Grid2D((0, 1), (0, 1), 7, 3)
    x0, x1, y0, y1 = g.cell_bounds(g.index(x, y))
    assert x0 <= x <= x1 and y0 <= y <= y1


def test_experiment_one_ranks():
    bt = precompute_basis(Grid1D(50.0, 50), GP_T, 0.99)
    bs = precompute_basis(Grid2D((0, 1), (0, 1), 25, 25), GP_S, 0.99)
    assert (bt.rank, bs.rank) == (5, 19)
    assert bt.retained_variance_fraction >= 0.99
    assert bs.retained_variance_fraction >= 0.99


def test_full_rank_reproduces_covariance():
    g = Grid1D(50.0, 50)
    b = precompute_basis(g, GP_T, 1.0)
    K = build_covariance(g, GP_T)
    assert b.rank == 50
    assert np.linalg.norm(b.covariance() - K) / np.linalg.norm(K) < 1e-12


def test_rank_monotone_in_var_frac():
    g = Grid2D((0, 1), (0, 1), 10, 10)
    ranks = [precompute_basis(g, GP_S, vf).rank for vf in (0.5, 0.9, 0.99, 0.999, 1.0)]
    assert ranks == sorted(ranks) and ranks[-1] == 100


def test_sample_field_is_linear_map():
    b = precompute_basis(Grid1D(10.0, 20), GPHyper(2.0, 1.5, 0.3), 0.99)
    z = np.random.default_rng(0).standard_normal(b.rank)
    f = sample_field(b, z)
    assert np.allclose(f.values, b.basis @ z + 0.3)
    with pytest.raises(ValueError):
        sample_field(b, np.zeros(b.rank + 1))


def test_basis_is_deterministic_and_round_trips(tmp_path):
    g = Grid2D((0, 1), (0, 1), 8, 8)
    a = precompute_basis(g, GP_S, 0.99)
    b = precompute_basis(g, GP_S, 0.99)
    assert np.array_equal(a.basis, b.basis)
    save_basis(a, tmp_path / "b.npz")
    c = load_basis(tmp_path / "b.npz")
    assert np.array_equal(a.basis, c.basis)
    assert c.grid == g and c.hyper == GP_S and c.rank == a.rank


def test_empirical_covariance_small_grid():
    g = Grid1D(10.0, 15)
    b = precompute_basis(g, GPHyper(3.0, 2.0), 1.0)
    z = np.random.default_rng(1).standard_normal((20000, b.rank))
    C = np.cov((z @ b.basis.T).T)
    K = build_covariance(g, GPHyper(3.0, 2.0))
    assert np.linalg.norm(C - K) / np.linalg.norm(K) < 0.05


def test_field_helpers():
    g = Grid1D(4.0, 4)
    f = GridField([0.0, 1.0, 2.0, 3.0])
    assert field_at(f, g, 2.5) == 2.0
    assert field_integral(f, g) == pytest.approx(np.exp([0, 1, 2, 3]).sum())
    assert field_rows(f, g)[1] == [1, 1.5, 1.0]
    g2 = Grid2D((0, 1), (0, 1), 2, 2)
    assert field_at(GridField([0, 1, 2, 3]), g2, (0.7, 0.2)) == 2.0
    with pytest.raises(ValueError):
        GridField([0.0, np.inf])
