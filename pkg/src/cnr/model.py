"""Conditional nonparanormal model ``g(y; x) = h(y) @ (A psi(x) + b) ~ N(0, 1)``.

Every routine here is vectorized over observations.  Features are passed as
``X`` with shape ``(n, k)`` (a single feature vector of shape ``(k,)`` is
accepted), labels as ``y`` with shape ``(n,)`` or a scalar that broadcasts.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .dictionary import Affine, PiecewiseLinear, dictionary_from_dict
from .errors import InfeasiblePoint, InvalidInput

__all__ = [
    "FEATURE_MAPS",
    "CnrParams",
    "CoefVector",
    "std_normal_cdf",
    "std_normal_pdf",
    "coef",
    "coefficients",
    "slopes",
    "transform",
    "transform_deriv",
    "is_valid",
    "validity",
    "nll_objective",
    "nll_reported",
    "nll_gradient",
    "log_density",
    "density",
    "posterior_mean",
    "inverse_transform",
    "sample",
    "design_rows",
    "lr_equivalent",
]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _identity(X):
    return X


def _quadratic(X):
    # x followed by the upper triangle of x x^T, row-major.
    k = X.shape[1]
    iu, ju = np.triu_indices(k)
    return np.concatenate([X, X[:, iu] * X[:, ju]], axis=1)


FEATURE_MAPS = {"identity": _identity, "quadratic": _quadratic}


def feature_dim(feature_map, k):
    if feature_map == "identity":
        return k
    if feature_map == "quadratic":
        return k + k * (k + 1) // 2
    raise InvalidInput(f"unknown feature map {feature_map!r}")


def apply_feature_map(feature_map, X):
    try:
        fn = FEATURE_MAPS[feature_map]
    except KeyError:
        raise InvalidInput(f"unknown feature map {feature_map!r}") from None
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise InvalidInput("features must be finite")
    return fn(X)


def std_normal_cdf(t):
    """Standard normal CDF (erf-based, ~1e-16 absolute accuracy)."""
    return ndtr(t)


def std_normal_pdf(t):
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _normal_mass(lo, hi):
    # P(lo < Z < hi), evaluated on the tail closest to the interval.
    upper = lo > 0
    return np.where(upper, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


@dataclass(frozen=True, eq=False)
class CnrParams:
    """Fitted or true parameters: ``A`` has shape ``(dim, k)``, ``b`` shape ``(dim,)``.

    ``k`` counts the columns of ``psi(x)``, i.e. after the feature map.
    """

    A: np.ndarray
    b: np.ndarray
    dictionary: object
    feature_map: str = "identity"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != b.size or b.size != self.dictionary.dim:
            raise InvalidInput(
                f"shape mismatch: A {A.shape}, b {b.shape}, dictionary dim {self.dictionary.dim}"
            )
        if self.feature_map not in FEATURE_MAPS:
            raise InvalidInput(f"unknown feature map {self.feature_map!r}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def k(self):
        return self.A.shape[1]

    @property
    def dim(self):
        return self.b.size

    def features(self, X):
        psi = apply_feature_map(self.feature_map, X)
        if psi.shape[1] != self.k:
            raise InvalidInput(f"feature map yields {psi.shape[1]} columns, A expects {self.k}")
        return psi

    def flatten(self):
        """``w = [a; b]`` with ``a`` the row-major vectorization of ``A``."""
        return np.concatenate([self.A.ravel(), self.b])

    @classmethod
    def from_flat(cls, w, dictionary, k, feature_map="identity"):
        w = np.asarray(w, dtype=float)
        dim = dictionary.dim
        if w.shape != (dim * (k + 1),):
            raise InvalidInput(f"flat parameter vector has shape {w.shape}, expected {(dim * (k + 1),)}")
        return cls(w[: dim * k].reshape(dim, k), w[dim * k:], dictionary, feature_map)

    def to_dict(self):
        return {
            "dictionary": self.dictionary.to_dict(),
            "feature_map": self.feature_map,
            "k": self.k,
            "A": self.A.ravel().tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, record):
        dictionary = dictionary_from_dict(record["dictionary"])
        k = int(record["k"])
        A = np.asarray(record["A"], dtype=float).reshape(dictionary.dim, k)
        return cls(A, np.asarray(record["b"], dtype=float), dictionary, record["feature_map"])

    def to_json(self):
        # repr-based float formatting in json round-trips doubles exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return (
            isinstance(other, CnrParams)
            and self.dictionary == other.dictionary
            and self.feature_map == other.feature_map
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
        )


@dataclass(frozen=True)
class CoefVector:
    """Coefficients ``u(x)`` for one feature vector, unpacked."""

    mu: float
    alphas: np.ndarray
    cum: np.ndarray

    @property
    def valid(self):
        return bool(np.all(self.alphas > 0))


def coefficients(params, X):
    """``u(x) = A psi(x) + b`` for every row of ``X``; shape ``(n, dim)``."""
    return params.features(X) @ params.A.T + params.b


def _cumulative(params, U):
    # Delta_0 = 0, Delta_j = sum_{i<=j} delta_i alpha_i; shape (n, L+1)
    deltas = params.dictionary.grid.deltas
    n = U.shape[0]
    cum = np.zeros((n, deltas.size + 1))
    cum[:, 1:] = np.cumsum(U[:, 2:2 + deltas.size] * deltas, axis=1)
    return cum


def coef(params, x):
    u = coefficients(params, x)
    if u.shape[0] != 1:
        raise InvalidInput("coef expects a single feature vector")
    if isinstance(params.dictionary, Affine):
        return CoefVector(float(u[0, 0]), u[0, 1:].copy(), np.zeros(1))
    return CoefVector(float(u[0, 0]), u[0, 1:].copy(), _cumulative(params, u)[0])


def slopes(params, X):
    """Slope coefficients (every entry of ``u(x)`` but the first); shape ``(n, dim-1)``."""
    return coefficients(params, X)[:, 1:]


def validity(params, X, floor=0.0):
    """Boolean mask: every slope of ``u(x)`` strictly above ``floor``."""
    return np.all(slopes(params, X) > floor, axis=1)


def is_valid(params, x, floor=0.0):
    mask = validity(params, x, floor)
    return bool(mask[0]) if mask.size == 1 else mask


def _broadcast(params, X, y):
    U = coefficients(params, X)
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = np.full(U.shape[0], float(y))
    elif U.shape[0] == 1 and y.shape[0] != 1:
        U = np.repeat(U, y.shape[0], axis=0)
    if y.shape != (U.shape[0],):
        raise InvalidInput(f"{U.shape[0]} feature rows but labels of shape {y.shape}")
    return U, y


def _squeeze(values, X, y):
    if np.ndim(y) == 0 and np.atleast_2d(X).shape[0] == 1:
        return float(values[0])
    return values


def _g_and_slope(params, U, y):
    H = params.dictionary.eval(y)
    Hd = params.dictionary.deriv(y)
    return np.sum(H * U, axis=1), np.sum(Hd * U, axis=1)


def transform(params, X, y):
    U, yy = _broadcast(params, X, y)
    return _squeeze(np.sum(params.dictionary.eval(yy) * U, axis=1), X, y)


def transform_deriv(params, X, y):
    U, yy = _broadcast(params, X, y)
    return _squeeze(np.sum(params.dictionary.deriv(yy) * U, axis=1), X, y)


def _active_slopes(params, X, y):
    U, yy = _broadcast(params, X, y)
    g, gp = _g_and_slope(params, U, yy)
    bad = np.flatnonzero(~(gp > 0))
    if bad.size:
        raise InfeasiblePoint(
            f"non-positive slope g'={gp[bad[0]]:.3g} at sample {bad[0]}", index=int(bad[0])
        )
    return g, gp


def nll_objective(params, X, y):
    """Training objective ``sum g^2 - 2 log g'`` (constants dropped)."""
    g, gp = _active_slopes(params, X, y)
    return float(np.sum(g * g) - 2.0 * np.sum(np.log(gp)))


def nll_reported(params, X, y):
    """Mean negative log likelihood including all constants."""
    g, gp = _active_slopes(params, X, y)
    return float(np.mean(0.5 * g * g - np.log(gp)) + LOG_SQRT_2PI)


def design_rows(dictionary, psi, y):
    """Rows ``p_i = [h(y_i) kron psi_i ; h(y_i)]`` and the derivative rows ``p'_i``.

    The Kronecker ordering matches ``CnrParams.flatten``.
    """
    psi = np.atleast_2d(psi)
    H = dictionary.eval(y)
    Hd = dictionary.deriv(y)
    n = psi.shape[0]
    rows = np.hstack([(H[:, :, None] * psi[:, None, :]).reshape(n, -1), H])
    drows = np.hstack([(Hd[:, :, None] * psi[:, None, :]).reshape(n, -1), Hd])
    return rows, drows


def nll_gradient(params, X, y):
    """Gradient of :func:`nll_objective` with respect to ``params.flatten()``."""
    g, gp = _active_slopes(params, X, y)
    psi = params.features(X)
    rows, drows = design_rows(params.dictionary, psi, np.broadcast_to(y, (psi.shape[0],)))
    return 2.0 * rows.T @ g - 2.0 * drows.T @ (1.0 / gp)


def _require_valid(params, U):
    ok = np.all(U[:, 1:] > 0, axis=1)
    if not np.all(ok):
        i = int(np.flatnonzero(~ok)[0])
        raise InfeasiblePoint(f"parameters violate monotonicity at feature row {i}", index=i)


def log_density(params, X, y):
    U, yy = _broadcast(params, X, y)
    _require_valid(params, U)
    g, gp = _g_and_slope(params, U, yy)
    return _squeeze(np.log(gp) - 0.5 * g * g - LOG_SQRT_2PI, X, y)


def density(params, X, y):
    """``p(y | x) = g'(y; x) phi(g(y; x))``; requires valid parameters at ``x``."""
    U, yy = _broadcast(params, X, y)
    _require_valid(params, U)
    g, gp = _g_and_slope(params, U, yy)
    return _squeeze(gp * std_normal_pdf(g), X, y)


def _posterior_mean_rows(params, U):
    if isinstance(params.dictionary, Affine):
        return -U[:, 0] / U[:, 1]
    pts = params.dictionary.grid.points
    L = pts.size - 1
    mu = U[:, 0]
    alpha = U[:, 1:]
    c = mu[:, None] + _cumulative(params, U)  # g at the knots, shape (n, L+1)

    lower = -std_normal_pdf(mu) / alpha[:, 0] + (pts[0] - mu / alpha[:, 0]) * ndtr(mu)
    a_in = alpha[:, 1:L + 1]
    middle = (std_normal_pdf(c[:, :-1]) - std_normal_pdf(c[:, 1:])) / a_in + (
        pts[:-1] - c[:, :-1] / a_in
    ) * _normal_mass(c[:, :-1], c[:, 1:])
    a_top = alpha[:, L + 1]
    upper = std_normal_pdf(c[:, L]) / a_top + (pts[L] - c[:, L] / a_top) * ndtr(-c[:, L])
    return lower + middle.sum(axis=1) + upper


def posterior_mean(params, X):
    """Closed-form ``E[y | x]`` for the piecewise-linear (or affine) dictionary."""
    U = coefficients(params, X)
    _require_valid(params, U)
    out = _posterior_mean_rows(params, U)
    return float(out[0]) if np.ndim(X) == 1 else out


def _inverse_rows(params, U, z):
    if isinstance(params.dictionary, Affine):
        return (z - U[:, 0]) / U[:, 1]
    pts = params.dictionary.grid.points
    c = U[:, :1] + _cumulative(params, U)
    idx = np.sum(c <= z[:, None], axis=1)  # segment index in 0..L+1
    anchor = np.maximum(idx - 1, 0)
    rows = np.arange(U.shape[0])
    return pts[anchor] + (z - c[rows, anchor]) / U[rows, 1 + idx]


def inverse_transform(params, X, z):
    """The unique ``y`` with ``g(y; x) = z``."""
    U = coefficients(params, X)
    z = np.asarray(z, dtype=float)
    zz = np.full(U.shape[0], float(z)) if z.ndim == 0 else z
    if U.shape[0] == 1 and zz.size != 1:
        U = np.repeat(U, zz.size, axis=0)
    if zz.shape != (U.shape[0],):
        raise InvalidInput("feature rows and latent values do not align")
    if not np.all(np.isfinite(zz)):
        raise InvalidInput("latent values must be finite")
    _require_valid(params, U)
    return _squeeze(_inverse_rows(params, U, zz), X, z)


def sample(params, X, rng):
    """One draw of ``y | x`` per feature row via inverse-transform sampling."""
    U = coefficients(params, X)
    _require_valid(params, U)
    z = rng.standard_normal(U.shape[0])
    out = _inverse_rows(params, U, z)
    return float(out[0]) if np.ndim(X) == 1 else out


def lr_equivalent(w, sigma, intercept=0.0):
    """Affine-dictionary parameters for ``y | x ~ N(w @ x + intercept, sigma^2)``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    A = np.vstack([-w / sigma, np.zeros_like(w)])
    b = np.array([-intercept / sigma, 1.0 / sigma])
    return CnrParams(A, b, Affine())


def default_dictionary(points=None):
    return Affine() if points is None else PiecewiseLinear.from_points(points)
