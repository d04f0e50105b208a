"""Gridded Gaussian-process fields and a precomputed low-rank generator.

A :class:`LowRankBasis` maps a short vector of i.i.d. standard normals to a
draw of the GP on a grid.  It is a truncated eigendecomposition of the grid
covariance, computed once; sampling is a single matrix-vector product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .domain import Domain, GPHyper
from .kernels import se_covariance_matrix

JITTER = 1e-6
BASIS_FORMAT_VERSION = 1


def _edges(lo: float, hi: float, n: int) -> np.ndarray:
    e = np.linspace(lo, hi, n + 1)
    e[0], e[-1] = lo, hi
    return e


def _cell_index(edges: np.ndarray, v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any((v < edges[0]) | (v > edges[-1])) or np.any(~np.isfinite(v)):
        raise ValueError(f"{name} coordinate outside grid [{edges[0]}, {edges[-1]}]")
    # side="left" sends points on a shared edge to the lower-index cell
    idx = np.searchsorted(edges, v, side="left") - 1
    return np.clip(idx, 0, len(edges) - 2)


@dataclass(frozen=True)
class Grid1D:
    """Uniform cells covering ``[0, t_max]``."""

    t_max: float
    n_t: int = 50

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError("n_t must be >= 1")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")

    @classmethod
    def for_domain(cls, domain: Domain, n_t: int = 50) -> "Grid1D":
        return cls(domain.t_max, n_t)

    @property
    def size(self) -> int:
        return self.n_t

    @property
    def edges(self) -> np.ndarray:
        return _edges(0.0, self.t_max, self.n_t)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def points(self) -> np.ndarray:
        return self.centers[:, None]

    @property
    def cell_width(self) -> float:
        return self.t_max / self.n_t

    @property
    def cell_measure(self) -> float:
        return self.cell_width

    def index(self, t) -> np.ndarray:
        return _cell_index(self.edges, t, "time")

    def spec(self) -> dict:
        return {"kind": "grid1d", "t_max": self.t_max, "n_t": self.n_t}


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular cells tiling the spatial region.

    Cells are numbered row-major over ``(ix, iy)``: ``index = ix * n_y + iy``.
    """

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    n_x: int = 25
    n_y: int = 25

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise ValueError("n_x and n_y must be >= 1")
        object.__setattr__(self, "x_range", tuple(map(float, self.x_range)))
        object.__setattr__(self, "y_range", tuple(map(float, self.y_range)))

    @classmethod
    def for_domain(cls, domain: Domain, n_x: int = 25, n_y: int | None = None) -> "Grid2D":
        return cls(domain.x_range, domain.y_range, n_x, n_x if n_y is None else n_y)

    @property
    def size(self) -> int:
        return self.n_x * self.n_y

    @property
    def x_edges(self) -> np.ndarray:
        return _edges(*self.x_range, self.n_x)

    @property
    def y_edges(self) -> np.ndarray:
        return _edges(*self.y_range, self.n_y)

    @property
    def centers(self) -> np.ndarray:
        xe, ye = self.x_edges, self.y_edges
        xc = 0.5 * (xe[:-1] + xe[1:])
        yc = 0.5 * (ye[:-1] + ye[1:])
        gx, gy = np.meshgrid(xc, yc, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def points(self) -> np.ndarray:
        return self.centers

    @property
    def cell_area(self) -> float:
        return (
            (self.x_range[1] - self.x_range[0]) / self.n_x
            * (self.y_range[1] - self.y_range[0]) / self.n_y
        )

    @property
    def cell_measure(self) -> float:
        return self.cell_area

    def index(self, x, y) -> np.ndarray:
        ix = _cell_index(self.x_edges, x, "x")
        iy = _cell_index(self.y_edges, y, "y")
        return ix * self.n_y + iy

    def cell_bounds(self, idx):
        idx = np.asarray(idx)
        ix, iy = np.divmod(idx, self.n_y)
        xe, ye = self.x_edges, self.y_edges
        return xe[ix], xe[ix + 1], ye[iy], ye[iy + 1]

    def spec(self) -> dict:
        return {
            "kind": "grid2d",
            "x_range": list(self.x_range),
            "y_range": list(self.y_range),
            "n_x": self.n_x,
            "n_y": self.n_y,
        }


def grid_from_spec(spec: dict):
    if spec["kind"] == "grid1d":
        return Grid1D(spec["t_max"], spec["n_t"])
    if spec["kind"] == "grid2d":
        return Grid2D(tuple(spec["x_range"]), tuple(spec["y_range"]), spec["n_x"], spec["n_y"])
    raise ValueError(f"unknown grid kind {spec['kind']!r}")


@dataclass(frozen=True, eq=False)
class GridField:
    """Values of a GP realization at the grid cells (piecewise constant)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class LowRankBasis:
    """Columns are covariance eigenvectors scaled by the root of their eigenvalue."""

    basis: np.ndarray
    hyper: GPHyper
    grid: Grid1D | Grid2D
    var_frac: float
    retained_variance_fraction: float
    jitter: float = JITTER

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    @property
    def grid_size(self) -> int:
        return self.basis.shape[0]

    def covariance(self) -> np.ndarray:
        return self.basis @ self.basis.T


def build_covariance(grid, h: GPHyper, jitter: float = JITTER) -> np.ndarray:
    """Dense covariance of the GP at the grid centers, with ``jitter * variance`` on the diagonal."""
    pts = grid.points
    if len(pts) == 0:
        raise ValueError("grid is empty")
    K = se_covariance_matrix(pts, pts, h)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += jitter * h.variance
    return K


def precompute_basis(grid, h: GPHyper, var_frac: float = 0.99, jitter: float = JITTER) -> LowRankBasis:
    """Smallest-rank eigenbasis whose eigenvalues hold ``var_frac`` of the trace."""
    if not 0.0 < var_frac <= 1.0:
        raise ValueError("var_frac must lie in (0, 1]")
    K = build_covariance(grid, h, jitter)
    try:
        w, V = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance eigendecomposition failed: {exc}") from exc
    w, V = w[::-1], V[:, ::-1]
    if w[-1] < -1e-8 * h.variance * len(w):
        raise np.linalg.LinAlgError(f"covariance not positive semidefinite (min eigenvalue {w[-1]:.3g})")
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if var_frac >= 1.0:
        m = len(w)
    else:
        m = int(np.searchsorted(np.cumsum(w), var_frac * total, side="left")) + 1
        m = min(m, len(w))
    # fix eigenvector signs so the basis is reproducible across LAPACK builds
    V = V[:, :m].copy()
    flip = V[np.argmax(np.abs(V), axis=0), np.arange(m)] < 0
    V[:, flip] *= -1
    B = V * np.sqrt(w[:m])
    B.setflags(write=False)
    return LowRankBasis(B, h, grid, float(var_frac), float(w[:m].sum() / total), jitter)


def sample_field(basis: LowRankBasis, z) -> GridField:
    z = np.asarray(z, dtype=float).reshape(-1)
    if len(z) != basis.rank:
        raise ValueError(f"expected {basis.rank} coefficients, got {len(z)}")
    return GridField(basis.basis @ z + basis.hyper.mean)


def field_at(field: GridField, grid, point):
    """Piecewise-constant lookup of the cell containing ``point``.

    ``point`` is a time for a :class:`Grid1D` and an ``(x, y)`` pair for a
    :class:`Grid2D`; arrays are accepted.
    """
    values = field.values if isinstance(field, GridField) else np.asarray(field)
    if isinstance(grid, Grid1D):
        idx = grid.index(point)
    else:
        x, y = point
        idx = grid.index(x, y)
    out = values[idx]
    return out if np.ndim(out) else float(out)


def field_integral(field: GridField, grid) -> float:
    """Integral of ``exp(field)`` over the grid: sum of cell values times cell measure."""
    return float(np.sum(np.exp(field.values)) * grid.cell_measure)


def field_rows(field: GridField, grid) -> list[list]:
    """Rows ``cell_index, center coord(s), value`` for CSV export."""
    centers = grid.points
    return [[i, *centers[i].tolist(), float(v)] for i, v in enumerate(field.values)]


def save_basis(basis: LowRankBasis, path) -> None:
    meta = {
        "version": BASIS_FORMAT_VERSION,
        "grid": basis.grid.spec(),
        "hyper": {
            "length_scale": basis.hyper.length_scale,
            "variance": basis.hyper.variance,
            "mean": basis.hyper.mean,
        },
        "jitter": basis.jitter,
        "var_frac": basis.var_frac,
        "retained_variance_fraction": basis.retained_variance_fraction,
        "rank": basis.rank,
    }
    with open(path, "wb") as fh:
        np.savez(fh, basis=np.asarray(basis.basis), meta=np.array(json.dumps(meta, sort_keys=True)))


def load_basis(path) -> LowRankBasis:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        B = np.array(data["basis"])
    if meta.get("version") != BASIS_FORMAT_VERSION:
        raise ValueError(f"unsupported basis file version {meta.get('version')}")
    if B.shape[1] != meta["rank"]:
        raise ValueError("basis file rank does not match its header")
    B.setflags(write=False)
    return LowRankBasis(
        B,
        GPHyper(**meta["hyper"]),
        grid_from_spec(meta["grid"]),
        meta["var_frac"],
        meta["retained_variance_fraction"],
        meta["jitter"],
    )
