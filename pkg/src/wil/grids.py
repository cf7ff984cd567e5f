"""Piecewise-constant probability grids over status and (status, age), with CSV I/O.

Cells are half-open ``[lo, hi)``. Mass that falls above the last edge is kept
in explicit overflow entries and never dropped.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12


class GridMismatchError(ValueError):
    pass


def _edges(e, name):
    e = np.asarray(e, dtype=float)
    if e.ndim != 1 or e.size < 2 or not np.all(np.isfinite(e)) or np.any(np.diff(e) <= 0):
        raise ValueError(f"{name} edges must be a strictly increasing finite 1-D array with at least 2 entries")
    return e


@dataclass
class DensityGrid1D:
    """Cell probabilities over status; ``overflow`` is the mass at or above the last edge."""

    edges: np.ndarray
    mass: np.ndarray
    overflow: float = 0.0

    def __post_init__(self):
        self.edges = _edges(self.edges, "status")
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (self.edges.size - 1,):
            raise ValueError("need one mass per status cell")
        self.overflow = float(self.overflow)

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centres(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def density(self):
        return self.mass / self.widths

    def total(self):
        return float(self.mass.sum() + self.overflow)

    def check(self, tol=MASS_TOL):
        if np.any(self.mass < 0) or self.overflow < 0:
            raise ValueError("negative mass in density grid")
        if abs(self.total() - 1.0) > tol:
            raise ValueError(f"density grid total {self.total()!r} differs from 1 by more than {tol}")
        return self

    def aggregate(self, factor):
        """Merge every ``factor`` consecutive cells."""
        n = self.mass.size
        if n % factor:
            raise ValueError("cell count is not divisible by the aggregation factor")
        return DensityGrid1D(self.edges[::factor], self.mass.reshape(n // factor, factor).sum(axis=1), self.overflow)


@dataclass
class DensityGrid2D:
    """Cell probabilities over (status, age).

    ``mass[i, k]`` is the mass of status cell i and age cell k. ``x_overflow[k]``
    holds status above the grid for age row k, with one extra entry at the end
    for the corner (both axes over). ``a_overflow[i]`` holds ages beyond the
    age grid for status cell i.
    """

    x_edges: np.ndarray
    a_edges: np.ndarray
    mass: np.ndarray
    x_overflow: np.ndarray = None
    a_overflow: np.ndarray = None

    def __post_init__(self):
        self.x_edges = _edges(self.x_edges, "status")
        self.a_edges = _edges(self.a_edges, "age")
        nx, na = self.x_edges.size - 1, self.a_edges.size - 1
        self.mass = np.asarray(self.mass, dtype=float)
        if self.mass.shape != (nx, na):
            raise ValueError(f"mass shape {self.mass.shape} does not match grid ({nx}, {na})")
        self.x_overflow = np.zeros(na + 1) if self.x_overflow is None else np.asarray(self.x_overflow, dtype=float)
        self.a_overflow = np.zeros(nx) if self.a_overflow is None else np.asarray(self.a_overflow, dtype=float)
        if self.x_overflow.shape != (na + 1,) or self.a_overflow.shape != (nx,):
            raise ValueError("overflow arrays have the wrong shape")

    @property
    def shape(self):
        return self.mass.shape

    def total(self):
        return float(self.mass.sum() + self.x_overflow.sum() + self.a_overflow.sum())

    def check(self, tol=MASS_TOL):
        if np.any(self.mass < 0) or np.any(self.x_overflow < 0) or np.any(self.a_overflow < 0):
            raise ValueError("negative mass in density grid")
        if abs(self.total() - 1.0) > tol:
            raise ValueError(f"density grid total {self.total()!r} differs from 1 by more than {tol}")
        return self

    def row_masses(self):
        """Mass per age row including the status overflow of that row; last entry is the age overflow."""
        rows = self.mass.sum(axis=0) + self.x_overflow[:-1]
        return np.concatenate((rows, [self.a_overflow.sum() + self.x_overflow[-1]]))

    def flat(self):
        """All cells, overflow included, in a fixed order."""
        return np.concatenate((self.mass.ravel(), self.x_overflow, self.a_overflow))

    def same_grid(self, other):
        return (self.mass.shape == other.mass.shape and np.array_equal(self.x_edges, other.x_edges)
                and np.array_equal(self.a_edges, other.a_edges))

    def copy(self):
        return DensityGrid2D(self.x_edges.copy(), self.a_edges.copy(), self.mass.copy(),
                             self.x_overflow.copy(), self.a_overflow.copy())


def marginal_status(g: DensityGrid2D) -> DensityGrid1D:
    """Integrate out the age axis."""
    mass = g.mass.sum(axis=1) + g.a_overflow
    return DensityGrid1D(g.x_edges.copy(), mass, float(g.x_overflow.sum()))


def l1_distance(f, g):
    """Sum of absolute cell differences, overflow cells included."""
    if isinstance(f, DensityGrid1D) and isinstance(g, DensityGrid1D):
        if not np.array_equal(f.edges, g.edges):
            raise GridMismatchError("status grids differ")
        return float(np.abs(f.mass - g.mass).sum() + abs(f.overflow - g.overflow))
    if isinstance(f, DensityGrid2D) and isinstance(g, DensityGrid2D):
        if not f.same_grid(g):
            raise GridMismatchError("(status, age) grids differ")
        return float(np.abs(f.flat() - g.flat()).sum())
    raise GridMismatchError("cannot compare a 1-D grid with a 2-D grid")


# ---------------------------------------------------------------- CSV


def _fmt(v):
    return repr(float(v))


def write_csv_1d(grid: DensityGrid1D, path_or_buf):
    rows = [["x"] + [_fmt(e) for e in grid.edges],
            ["mass"] + [_fmt(m) for m in grid.mass] + [_fmt(grid.overflow)]]
    _write_rows(rows, path_or_buf)


def write_csv_2d(grid: DensityGrid2D, path_or_buf):
    """Header names the status edges; each row starts with its lower age edge.

    The last column is the status overflow of the row; the final row (keyed by
    the upper age edge) is the age overflow, ending in the corner cell.
    """
    rows = [["a\\x"] + [_fmt(e) for e in grid.x_edges]]
    na = grid.a_edges.size - 1
    for k in range(na):
        rows.append([_fmt(grid.a_edges[k])] + [_fmt(m) for m in grid.mass[:, k]] + [_fmt(grid.x_overflow[k])])
    rows.append([_fmt(grid.a_edges[-1])] + [_fmt(m) for m in grid.a_overflow] + [_fmt(grid.x_overflow[-1])])
    _write_rows(rows, path_or_buf)


def _write_rows(rows, path_or_buf):
    if hasattr(path_or_buf, "write"):
        csv.writer(path_or_buf, lineterminator="\n").writerows(rows)
        return
    with open(path_or_buf, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def read_csv(path_or_text):
    """Read a grid written by :func:`write_csv_1d` or :func:`write_csv_2d`."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        rows = list(csv.reader(io.StringIO(path_or_text)))
    else:
        with open(path_or_text, newline="") as fh:
            rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError("empty density CSV")
    head = rows[0][0]
    try:
        if head == "x":
            edges = np.array([float(v) for v in rows[0][1:]])
            vals = np.array([float(v) for v in rows[1][1:]])
            return DensityGrid1D(edges, vals[:-1], vals[-1])
        if head == "a\\x":
            x_edges = np.array([float(v) for v in rows[0][1:]])
            body = np.array([[float(v) for v in r] for r in rows[1:]])
            a_edges = body[:, 0]
            vals = body[:, 1:]
            return DensityGrid2D(x_edges, a_edges, vals[:-1, :-1].T, vals[:, -1], vals[-1, :-1])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"malformed density CSV: {exc}") from exc
    raise ValueError(f"unrecognised density CSV header {head!r}")
