import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wil.grids import (DensityGrid1D, DensityGrid2D, GridMismatchError, l1_distance, marginal_status, read_csv,
                       write_csv_1d, write_csv_2d)


def grid2(mass, xo=None, ao=None):
    nx, na = mass.shape
    return DensityGrid2D(np.linspace(0, 1, nx + 1), np.linspace(0, 2, na + 1), mass, xo, ao)


def test_l1_examples():
    m = np.zeros((3, 2))
    m[0, 0] = 1.0
    f = grid2(m)
    assert l1_distance(f, f) == 0.0
    n = np.zeros((3, 2))
    n[2, 1] = 1.0
    assert l1_distance(f, grid2(n)) == 2.0


def test_l1_counts_overflow():
    a = DensityGrid1D(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]), 0.0)
    b = DensityGrid1D(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.0]), 0.5)
    assert l1_distance(a, b) == 1.0


def test_l1_grid_mismatch():
    a = DensityGrid1D(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5]))
    b = DensityGrid1D(np.array([0.0, 1.0, 3.0]), np.array([0.5, 0.5]))
    with pytest.raises(GridMismatchError):
        l1_distance(a, b)
    with pytest.raises(GridMismatchError):
        l1_distance(a, grid2(np.ones((2, 2)) / 4))


prob = arrays(np.float64, (4, 3), elements=st.floats(0.0, 1.0)).filter(lambda a: a.sum() > 0).map(lambda a: a / a.sum())


@settings(max_examples=100, deadline=None)
@given(prob, prob, prob)
def test_l1_triangle_and_bounds(a, b, c):
    f, g, h = grid2(a), grid2(b), grid2(c)
    assert l1_distance(f, h) <= l1_distance(f, g) + l1_distance(g, h) + 1e-12
    assert 0.0 <= l1_distance(f, g) <= 2.0 + 1e-12
    assert l1_distance(f, g) == l1_distance(g, f)


@settings(max_examples=50, deadline=None)
@given(prob)
def test_csv_round_trip_2d(a):
    f = grid2(a[:, :-1] * 1.0, np.append(a[0, :-1] * 0, 0.0), a[:, -1])
    buf = io.StringIO()
    write_csv_2d(f, buf)
    g = read_csv(buf.getvalue())
    assert f.same_grid(g)
    assert np.array_equal(f.flat(), g.flat())


def test_csv_round_trip_1d():
    f = DensityGrid1D(np.array([0.0, 0.1, 0.3]), np.array([0.1 + 0.2, 1 / 3]), 0.1)
    buf = io.StringIO()
    write_csv_1d(f, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "x,0.0,0.1,0.3"
    g = read_csv(text)
    assert np.array_equal(g.mass, f.mass) and g.overflow == f.overflow


def test_read_csv_rejects_garbage():
    with pytest.raises(ValueError):
        read_csv("foo,1,2\nbar,3\n")


def test_marginal_of_product_returns_factor():
    h = np.array([0.2, 0.5, 0.3])
    r = np.array([0.6, 0.3, 0.1])
    f = grid2(np.outer(h, r))
    assert np.allclose(marginal_status(f).mass, h, rtol=1e-15)
    assert marginal_status(f).total() == pytest.approx(1.0)


def test_aggregate_1d():
    f = DensityGrid1D(np.linspace(0, 1, 5), np.full(4, 0.25))
    g = f.aggregate(2)
    assert np.allclose(g.mass, [0.5, 0.5]) and np.allclose(g.edges, [0, 0.5, 1])
