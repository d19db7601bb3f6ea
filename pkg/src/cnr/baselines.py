"""Linear-regression (LR) and Gaussian-regression (GR) baselines.

GR is the CNR model with the affine dictionary ``h(y) = [1, y]``, so that
``g(y; x) = u(x) + v(x) y`` and ``y | x ~ N(-u/v, 1/v^2)``.  Wherever a
CNR-type model is invalid at a test point, predictions and likelihoods fall
back to an LR model; :func:`score_with_fallback` implements that rule for both
GR and piecewise CNR.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import model
from .dictionary import Affine
from .errors import InvalidInput, ZeroVariance
from .solver import AdmmConfig, admm_fit, assemble

__all__ = [
    "LrModel",
    "GrModel",
    "lr_fit",
    "lr_predict",
    "lr_log_density",
    "lr_nll",
    "lr_to_cnr",
    "gr_fit",
    "gr_predict",
    "gr_variance",
    "gr_nll",
    "score_with_fallback",
]


@dataclass(frozen=True)
class LrModel:
    w: np.ndarray
    sigma2: float
    intercept: float = 0.0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ZeroVariance("LR variance must be positive")


def lr_fit(X, y, intercept=False, ridge=1e-10):
    """Least squares with the maximum-likelihood (1/n) residual variance.

    Features are used as given unless ``intercept`` is set, in which case an
    unpenalized constant term is estimated as well.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    if n < 2:
        raise InvalidInput("LR needs at least two samples")
    D = np.hstack([X, np.ones((n, 1))]) if intercept else X
    gram = D.T @ D
    try:
        coef = np.linalg.solve(gram, D.T @ y)
    except np.linalg.LinAlgError:
        coef = np.linalg.solve(gram + ridge * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0]), D.T @ y)
    resid = y - D @ coef
    sigma2 = float(np.mean(resid**2))
    if sigma2 < 1e-12:
        raise ZeroVariance(f"residual variance {sigma2:.3g} is numerically zero")
    if intercept:
        return LrModel(coef[:-1], sigma2, float(coef[-1]))
    return LrModel(coef, sigma2)


def lr_predict(lr, X):
    X = np.asarray(X, dtype=float)
    out = X @ lr.w + lr.intercept
    return float(out) if X.ndim == 1 else out


def lr_log_density(lr, X, y):
    r = np.asarray(y, dtype=float) - lr_predict(lr, X)
    return -0.5 * r * r / lr.sigma2 - 0.5 * math.log(lr.sigma2) - model.LOG_SQRT_2PI


def lr_nll(lr, X, y):
    """Mean Gaussian negative log likelihood, constants included."""
    return float(-np.mean(lr_log_density(lr, np.atleast_2d(X), np.atleast_1d(y))))


def lr_to_cnr(lr):
    """The affine-dictionary CNR parameters describing the same conditional law."""
    return model.lr_equivalent(lr.w, math.sqrt(lr.sigma2), lr.intercept)


@dataclass(frozen=True)
class GrModel:
    inner: model.CnrParams
    fallback: LrModel = None
    diagnostics: object = None


def gr_fit(X, y, config=None, feature_map="identity", fallback=None):
    """Fit the affine-in-``y`` CNR by ADMM; ``fallback`` defaults to an LR fit on the same data."""
    params, diag = admm_fit(assemble(X, y, Affine(), feature_map), config or AdmmConfig())
    if fallback is None:
        fallback = lr_fit(X, y)
    return GrModel(params, fallback, diag)


def _uv(gr, X):
    U = model.coefficients(gr.inner, X)
    return U[:, 0], U[:, 1]


def gr_variance(gr, X):
    """``1 / v(x)^2``; ``nan`` where ``v(x) <= 0``."""
    _, v = _uv(gr, X)
    with np.errstate(divide="ignore"):
        return np.where(v > 0, 1.0 / v**2, np.nan)


def gr_predict(gr, X):
    """``-u(x) / v(x)``, with the LR prediction wherever ``v(x) <= 0``."""
    X = np.atleast_2d(X)
    scores = score_with_fallback(gr.inner, gr.fallback, X, None)
    return scores.prediction


def gr_nll(gr, X, y):
    return float(np.mean(score_with_fallback(gr.inner, gr.fallback, X, y).nll))


@dataclass(frozen=True)
class Scores:
    prediction: np.ndarray
    nll: np.ndarray
    valid: np.ndarray

    @property
    def fallback_count(self):
        return int(np.sum(~self.valid))


def score_with_fallback(params, fallback, X, y):
    """Per-point prediction and negative log likelihood under ``params``.

    Points where ``params`` is not monotone are scored by ``fallback`` (an
    :class:`LrModel`).  The validity test uses features only.  ``y`` may be
    ``None`` for prediction alone.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    valid = model.validity(params, X)
    if fallback is None and not np.all(valid):
        raise InvalidInput("model invalid at some points and no fallback supplied")
    pred = np.empty(X.shape[0])
    if np.any(valid):
        pred[valid] = model.posterior_mean(params, X[valid])
    if not np.all(valid):
        pred[~valid] = lr_predict(fallback, X[~valid])
    nll = None
    if y is not None:
        y = np.asarray(y, dtype=float).reshape(-1)
        nll = np.empty(X.shape[0])
        if np.any(valid):
            nll[valid] = -model.log_density(params, X[valid], y[valid])
        if not np.all(valid):
            nll[~valid] = -lr_log_density(fallback, X[~valid], y[~valid])
    return Scores(pred, nll, valid)
