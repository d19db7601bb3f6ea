"""Piecewise-linear basis dictionaries over the label axis.

A dictionary maps a label ``y`` to a basis vector ``h(y)`` whose first entry is
the constant 1 and whose remaining entries are continuous, non-decreasing
functions of ``y``.  Two variants are provided:

``PiecewiseLinear``
    Knots ``p_0 < ... < p_L`` split the real line into ``L + 2`` bins; the basis
    is ``[1, h_0, ..., h_{L+1}]`` where ``h_0`` is the ramp below ``p_0``,
    ``h_j`` (``1 <= j <= L``) is the clipped ramp over ``[p_{j-1}, p_j]`` and
    ``h_{L+1}`` the ramp above ``p_L``.  Bins are half-open, ``[p_j, p_{j+1})``,
    so derivatives at knots are right-derivatives.

``Affine``
    ``h(y) = [1, y]``, which turns the model into a heteroscedastic Gaussian.

All evaluators are vectorized: a scalar ``y`` gives a vector of length
``dim`` and an array of shape ``(n,)`` gives an ``(n, dim)`` matrix.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKnots, InvalidInput

__all__ = [
    "KnotGrid",
    "PiecewiseLinear",
    "Affine",
    "basis_eval",
    "basis_deriv",
    "active_bin",
    "knots_from_quantiles",
    "evenly_spaced_knots",
    "dictionary_from_dict",
]


def _as_labels(y):
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInput("labels must be finite")
    return y


@dataclass(frozen=True, eq=False)
class KnotGrid:
    """Strictly ascending knot points ``[p_0, ..., p_L]``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        if pts.size == 0:
            raise InvalidInput("a knot grid needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("knots must be finite")
        if np.any(np.diff(pts) <= 0):
            raise DegenerateKnots(f"knots must be strictly ascending, got {pts.tolist()}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def L(self):
        return self.points.size - 1

    @property
    def deltas(self):
        """Bin widths ``[delta_1, ..., delta_L]``."""
        return np.diff(self.points)

    def __eq__(self, other):
        return isinstance(other, KnotGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class PiecewiseLinear:
    grid: KnotGrid

    kind = "piecewise"

    @classmethod
    def from_points(cls, points):
        return cls(KnotGrid(points))

    @property
    def dim(self):
        return self.grid.L + 3

    def eval(self, y):
        y = _as_labels(y)
        pts = self.grid.points
        out = np.empty(y.shape + (self.dim,))
        out[..., 0] = 1.0
        out[..., 1] = np.minimum(y - pts[0], 0.0)
        for j in range(1, self.grid.L + 1):
            out[..., j + 1] = np.clip(y - pts[j - 1], 0.0, pts[j] - pts[j - 1])
        out[..., -1] = np.maximum(y - pts[-1], 0.0)
        return out

    def deriv(self, y):
        y = _as_labels(y)
        bins = np.searchsorted(self.grid.points, y, side="right")
        out = np.zeros(y.shape + (self.dim,))
        np.put_along_axis(out, (np.asarray(bins) + 1)[..., None], 1.0, axis=-1)
        return out

    def active_bin(self, y):
        y = _as_labels(y)
        bins = np.searchsorted(self.grid.points, y, side="right")
        return int(bins) if np.ndim(bins) == 0 else bins

    def slope_mask(self):
        """Boolean mask of the coefficient entries that act as slopes."""
        mask = np.ones(self.dim, dtype=bool)
        mask[0] = False
        return mask

    def linear_coefficients(self, loc, scale):
        """Coefficients ``c`` with ``h(y) @ c == (y - loc) / scale`` for all ``y``."""
        c = np.full(self.dim, 1.0 / scale)
        c[0] = (self.grid.points[0] - loc) / scale
        return c

    def to_dict(self):
        return {"variant": self.kind, "knots": self.grid.points.tolist()}


@dataclass(frozen=True)
class Affine:
    kind = "affine"

    @property
    def dim(self):
        return 2

    def eval(self, y):
        y = _as_labels(y)
        return np.stack(np.broadcast_arrays(np.ones_like(y), y), axis=-1)

    def deriv(self, y):
        y = _as_labels(y)
        return np.stack(np.broadcast_arrays(np.zeros_like(y), np.ones_like(y)), axis=-1)

    def slope_mask(self):
        return np.array([False, True])

    def linear_coefficients(self, loc, scale):
        return np.array([-loc / scale, 1.0 / scale])

    def to_dict(self):
        return {"variant": self.kind}


def dictionary_from_dict(record):
    variant = record["variant"]
    if variant == "piecewise":
        return PiecewiseLinear.from_points(record["knots"])
    if variant == "affine":
        return Affine()
    raise InvalidInput(f"unknown dictionary variant {variant!r}")


def basis_eval(dictionary, y):
    return dictionary.eval(y)


def basis_deriv(dictionary, y):
    return dictionary.deriv(y)


def active_bin(grid, y):
    """Index in ``{0, ..., L+1}`` of the bin containing ``y``.

    0 below ``p_0``, ``j + 1`` on ``[p_j, p_{j+1})`` and ``L + 1`` from ``p_L`` on.
    """
    if isinstance(grid, PiecewiseLinear):
        grid = grid.grid
    return PiecewiseLinear(grid).active_bin(y)


def knots_from_quantiles(samples, qs=(0.3, 0.5, 0.7)):
    """Knots at empirical quantiles of ``samples``.

    Uses linear interpolation at fractional index ``q * (n - 1)`` of the sorted
    samples.  Tied quantiles raise :class:`DegenerateKnots`.
    """
    samples = _as_labels(samples).reshape(-1)
    if samples.size == 0:
        raise InvalidInput("cannot place knots from an empty sample")
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    if np.any((qs <= 0) | (qs >= 1)) or np.any(np.diff(qs) <= 0):
        raise InvalidInput("quantile levels must be ascending and inside (0, 1)")
    points = np.quantile(samples, qs, method="linear")
    if samples.min() == samples.max() or np.any(np.diff(points) <= 0):
        raise DegenerateKnots(f"tied quantile knots {points.tolist()}")
    return KnotGrid(points)


def evenly_spaced_knots(lo, hi, count):
    return KnotGrid(np.linspace(lo, hi, count))
