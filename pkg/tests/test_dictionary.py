import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnr.dictionary import (
    Affine,
    KnotGrid,
    PiecewiseLinear,
    active_bin,
    basis_deriv,
    basis_eval,
    dictionary_from_dict,
    evenly_spaced_knots,
    knots_from_quantiles,
)
from cnr.errors import DegenerateKnots, InvalidInput

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def grids(draw, max_L=6):
    p0 = draw(st.floats(-5, 5))
    gaps = draw(st.lists(st.floats(0.05, 3.0), min_size=0, max_size=max_L))
    return KnotGrid(np.cumsum([p0, *gaps]))


class TestKnotGrid:
    def test_deltas(self):
        g = KnotGrid([-1.0, 0.5, 2.0])
        assert g.L == 2
        np.testing.assert_array_equal(g.deltas, [1.5, 1.5])

    @pytest.mark.parametrize("pts", [[0.0, 0.0], [1.0, 0.0], [], [0.0, np.nan]])
    def test_rejects_bad_points(self, pts):
        with pytest.raises((InvalidInput, DegenerateKnots)):
            KnotGrid(pts)

    def test_single_knot(self):
        g = KnotGrid([0.0])
        assert g.L == 0 and g.deltas.size == 0
        assert PiecewiseLinear(g).dim == 3


class TestBasisEval:
    def test_inside_first_bin(self):
        np.testing.assert_array_equal(basis_eval(PiecewiseLinear.from_points([0, 1]), 0.5), [1, 0, 0.5, 0])

    def test_above_last_knot(self):
        np.testing.assert_array_equal(basis_eval(PiecewiseLinear.from_points([0, 1]), 2.0), [1, 0, 1, 1])

    def test_below_single_knot(self):
        np.testing.assert_array_equal(basis_eval(PiecewiseLinear.from_points([0]), -1.0), [1, -1, 0])

    def test_affine(self):
        np.testing.assert_array_equal(basis_eval(Affine(), 3.7), [1, 3.7])

    def test_vectorized_shape(self):
        d = PiecewiseLinear.from_points([0, 1, 2])
        assert d.eval(np.linspace(-1, 3, 7)).shape == (7, 5)

    @pytest.mark.parametrize("y", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, y):
        with pytest.raises(InvalidInput):
            basis_eval(PiecewiseLinear.from_points([0, 1]), y)
        with pytest.raises(InvalidInput):
            basis_deriv(Affine(), y)


class TestBasisDeriv:
    def test_interior(self):
        np.testing.assert_array_equal(basis_deriv(PiecewiseLinear.from_points([0, 1]), 0.5), [0, 0, 1, 0])

    def test_right_derivative_at_knot(self):
        np.testing.assert_array_equal(basis_deriv(PiecewiseLinear.from_points([0, 1]), 1.0), [0, 0, 0, 1])

    def test_affine(self):
        np.testing.assert_array_equal(basis_deriv(Affine(), -5.0), [0, 1])


class TestActiveBin:
    @pytest.mark.parametrize("y, expected", [(-3.0, 0), (0.0, 1), (0.999, 1), (1.0, 2), (7.0, 2)])
    def test_examples(self, y, expected):
        assert active_bin(KnotGrid([0.0, 1.0]), y) == expected

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            active_bin(KnotGrid([0.0]), np.nan)


class TestQuantileKnots:
    def test_exact_indices(self):
        g = knots_from_quantiles(np.arange(11.0), (0.3, 0.5, 0.7))
        np.testing.assert_array_equal(g.points, [3, 5, 7])

    def test_ties(self):
        with pytest.raises(DegenerateKnots):
            knots_from_quantiles([5.0, 5.0, 5.0], (0.5,))
        with pytest.raises(DegenerateKnots):
            knots_from_quantiles([0, 1, 1, 1, 1, 1, 1, 1, 1, 2.0], (0.3, 0.5, 0.7))

    def test_linear_interpolation(self):
        g = knots_from_quantiles([0.0, 10.0], (0.25, 0.5))
        np.testing.assert_allclose(g.points, [2.5, 5.0])

    def test_normal_median(self):
        s = np.random.default_rng(3).standard_normal(10**6)
        assert abs(knots_from_quantiles(s, (0.5,)).points[0]) < 0.01

    @pytest.mark.parametrize("qs", [(), (0.5, 0.3), (0.0, 0.5), (0.5, 1.0)])
    def test_bad_quantiles(self, qs):
        with pytest.raises(InvalidInput):
            knots_from_quantiles(np.arange(10.0), qs)

    def test_empty(self):
        with pytest.raises(InvalidInput):
            knots_from_quantiles([], (0.5,))


def test_evenly_spaced():
    np.testing.assert_allclose(evenly_spaced_knots(-1, 1, 5).points, [-1, -0.5, 0, 0.5, 1])


def test_dict_round_trip():
    for d in (PiecewiseLinear.from_points([-1.0, 0.1, 2.0]), Affine()):
        back = dictionary_from_dict(d.to_dict())
        assert type(back) is type(d) and back.dim == d.dim
        if isinstance(d, PiecewiseLinear):
            np.testing.assert_array_equal(back.grid.points, d.grid.points)


class TestProperties:
    @given(grids(), finite)
    def test_constant_entries(self, grid, y):
        d = PiecewiseLinear(grid)
        h, hd = d.eval(y), d.deriv(y)
        assert h.shape == hd.shape == (grid.L + 3,)
        assert h[0] == 1 and hd[0] == 0

    @given(grids(), finite, finite)
    def test_monotone(self, grid, y1, y2):
        lo, hi = sorted((y1, y2))
        d = PiecewiseLinear(grid)
        assert np.all(d.eval(hi)[1:] >= d.eval(lo)[1:])

    @given(grids(), finite)
    def test_one_hot_derivative_matches_bin(self, grid, y):
        hd = PiecewiseLinear(grid).deriv(y)[1:]
        assert hd.sum() == 1 and np.count_nonzero(hd) == 1
        assert int(np.argmax(hd)) == active_bin(grid, y)

    @given(grids(), st.floats(0, 20))
    def test_telescoping_above_last_knot(self, grid, extra):
        h = PiecewiseLinear(grid).eval(grid.points[-1] + extra)
        np.testing.assert_array_equal(h[2:grid.L + 2], grid.deltas)
        mask = np.zeros(grid.L + 3)
        mask[2:grid.L + 2] = 1
        assert abs(h @ mask - (grid.points[-1] - grid.points[0])) <= 1e-12 * (1 + abs(grid.points).max())

    @given(grids())
    @settings(max_examples=50)
    def test_continuity_and_fd_derivative(self, grid):
        d = PiecewiseLinear(grid)
        ys = np.linspace(grid.points[0] - 2, grid.points[-1] + 2, 401)
        eps = 1e-9
        assert np.max(np.abs(d.eval(ys + eps) - d.eval(ys))) < 1e-8
        away = np.min(np.abs(ys[:, None] - grid.points[None, :]), axis=1) > 1e-4
        e = 1e-6
        fd = (d.eval(ys[away] + e) - d.eval(ys[away] - e)) / (2 * e)
        np.testing.assert_allclose(fd, d.deriv(ys[away]), atol=1e-8)
