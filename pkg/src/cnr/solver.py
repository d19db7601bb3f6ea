"""Maximum-likelihood fitting.

The training objective in the flattened parameters ``w = [vec_row(A); b]`` is::

    f(w) = w' P w - 2 sum_i log([P' w]_i)

with ``P = sum_i p_i p_i'`` and ``P'`` the stacked derivative rows (see
:func:`cnr.model.design_rows`).  :func:`admm_fit` splits the logarithms through
auxiliary variables ``z = P' w`` and alternates closed-form updates;
:func:`reference_fit` minimizes ``f`` directly with a damped Newton method and
is kept as an independent check on small problems.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import Diverged, InfeasibleStart, InvalidInput
from .model import CnrParams, apply_feature_map, design_rows

__all__ = [
    "DesignMatrices",
    "AdmmConfig",
    "FitDiagnostics",
    "assemble",
    "objective",
    "gradient",
    "z_update",
    "admm_fit",
    "reference_fit",
    "fit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    P: np.ndarray
    Pprime: np.ndarray
    dictionary: object
    feature_map: str
    k: int
    label_loc: float
    label_scale: float

    @property
    def n(self):
        return self.Pprime.shape[0]

    @property
    def m(self):
        return self.P.shape[0]

    def start(self):
        """Feasible point: ``A = 0`` and ``g(y) = (y - mean) / std`` for every ``x``."""
        if not self.label_scale > 0:
            raise InfeasibleStart("labels have zero spread; no feasible starting point")
        b = self.dictionary.linear_coefficients(self.label_loc, self.label_scale)
        return np.concatenate([np.zeros(self.dictionary.dim * self.k), b])

    def unflatten(self, w):
        return CnrParams.from_flat(w, self.dictionary, self.k, self.feature_map)


@dataclass
class AdmmConfig:
    rho: float = 1.0
    max_iters: int = 50_000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    ridge: float = 1e-8
    z_init: float = 1.0
    penalty: float = 0.0
    check_every: int = 10

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidInput("rho must be positive")
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise InvalidInput("tolerances must be positive")
        if self.max_iters < 0 or self.ridge < 0 or self.penalty < 0 or not self.z_init > 0:
            raise InvalidInput("invalid ADMM configuration")
        if self.check_every < 1:
            raise InvalidInput("check_every must be at least 1")


@dataclass
class FitDiagnostics:
    iterations: int = 0
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")
    objective_trace: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self):
        return asdict(self)


def assemble(X, y, dictionary, feature_map="identity"):
    """Build ``P`` and ``P'`` for the dataset ``(X, y)``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    psi = apply_feature_map(feature_map, X)
    if psi.shape[0] != y.size:
        raise InvalidInput(f"{psi.shape[0]} feature rows but {y.size} labels")
    if y.size < 1:
        raise InvalidInput("need at least one sample")
    rows, drows = design_rows(dictionary, psi, y)
    P = rows.T @ rows
    P = 0.5 * (P + P.T)
    return DesignMatrices(
        P=P,
        Pprime=drows,
        dictionary=dictionary,
        feature_map=feature_map,
        k=psi.shape[1],
        label_loc=float(np.mean(y)),
        label_scale=float(np.std(y)),
    )


def objective(mats, w, penalty=0.0):
    """``f(w)``; ``+inf`` outside the domain ``P' w > 0``."""
    q = mats.Pprime @ w
    if not np.all(q > 0):
        return np.inf
    return float(w @ mats.P @ w - 2.0 * np.sum(np.log(q)) + penalty * (w @ w))


def gradient(mats, w, penalty=0.0):
    q = mats.Pprime @ w
    return 2.0 * (mats.P @ w) - 2.0 * mats.Pprime.T @ (1.0 / q) + 2.0 * penalty * w


def z_update(v, rho):
    """Positive root of ``rho z^2 - v z - 2 = 0``."""
    v = np.asarray(v, dtype=float)
    root = np.sqrt(v * v + 8.0 * rho)
    # the two algebraically equal forms avoid cancellation on either sign of v
    return np.where(v >= 0, (v + root) / (2.0 * rho), 4.0 / (root - v))


class _SlopeRows:
    """``P'`` applied blockwise.

    Row ``i`` of ``P'`` is ``[psi_i, 1]`` placed in the coefficient block of its
    active basis entry and zero elsewhere.  Samples are kept sorted by block so
    each product reduces to one small dense product per block.
    """

    def __init__(self, mats):
        Pp = mats.Pprime
        dim, k = mats.dictionary.dim, mats.k
        self.dim, self.k = dim, k
        active = np.argmax(Pp[:, dim * k:], axis=1)
        self.order = np.argsort(active, kind="stable")
        rows = np.arange(Pp.shape[0])[:, None]
        cols = active[:, None] * k + np.arange(k)
        psi1 = np.hstack([Pp[rows, cols], np.ones((Pp.shape[0], 1))])[self.order]
        bounds = np.searchsorted(active[self.order], np.arange(dim + 1))
        self.blocks = [
            (j, psi1[lo:hi], slice(lo, hi))
            for j, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))
            if hi > lo
        ]
        self.n = Pp.shape[0]

    def matvec(self, w):
        Wfull = np.column_stack([w[: self.dim * self.k].reshape(self.dim, self.k), w[self.dim * self.k:]])
        q = np.empty(self.n)
        for j, block, sl in self.blocks:
            q[sl] = block @ Wfull[j]
        return q

    def rmatvec(self, z):
        Wfull = np.zeros((self.dim, self.k + 1))
        for j, block, sl in self.blocks:
            Wfull[j] = z[sl] @ block
        return np.concatenate([Wfull[:, :-1].ravel(), Wfull[:, -1]])


def admm_fit(mats, config=None):
    """Fit by ADMM.  Returns ``(CnrParams, FitDiagnostics)``.

    Each iteration performs the three updates::

        w   <- -1/2 (P + rho/2 P'^T P' + ridge I)^{-1} P'^T (lam - rho z)
        z_i <- positive root of rho z^2 - (rho [P' w]_i + lam_i) z - 2 = 0
        lam <- lam + rho (P' w - z)

    starting from ``z = z_init``, ``lam = 0``.  It stops once
    ``||P' w - z|| <= tol_primal sqrt(n)`` and
    ``rho ||P'^T (z - z_prev)|| <= tol_dual sqrt(m)``.  The returned iterate is
    the feasible one (``P' w > 0``) with the lowest objective among the
    starting point and the checked iterates.
    """
    config = config or AdmmConfig()
    rho = config.rho
    n, m = mats.Pprime.shape

    w_best = mats.start()
    f_best = objective(mats, w_best, config.penalty)
    diag = FitDiagnostics(objective_trace=[f_best])
    if config.max_iters == 0:
        return mats.unflatten(w_best), diag

    op = _SlopeRows(mats)
    G = mats.Pprime.T @ mats.Pprime
    M = mats.P + 0.5 * rho * G + (config.ridge + config.penalty) * np.eye(m)
    factor = cho_factor(M)

    # z and lam live in the operator's sorted sample order
    z = np.full(n, float(config.z_init))
    lam = np.zeros(n)
    Ptz = op.rmatvec(z)
    Ptlam = np.zeros(m)
    eps_primal = config.tol_primal * np.sqrt(n)
    eps_dual = config.tol_dual * np.sqrt(m)

    for it in range(1, config.max_iters + 1):
        w = cho_solve(factor, 0.5 * (rho * Ptz - Ptlam))
        q = op.matvec(w)
        z = z_update(rho * q + lam, rho)
        lam += rho * (q - z)
        Ptz_new = op.rmatvec(z)

        if it % config.check_every == 0 or it == config.max_iters:
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(lam))):
                raise Diverged(f"non-finite ADMM iterate at iteration {it}")
            r_primal = float(np.linalg.norm(q - z))
            r_dual = float(rho * np.linalg.norm(Ptz_new - Ptz))
            f = objective(mats, w, config.penalty)
            diag.objective_trace.append(f)
            diag.iterations = it
            diag.primal_residual = r_primal
            diag.dual_residual = r_dual
            if f < f_best:
                f_best, w_best = f, w
            if r_primal <= eps_primal and r_dual <= eps_dual:
                diag.converged = True
                break
            Ptlam = op.rmatvec(lam)
        else:
            Ptlam = Ptlam + rho * (G @ w - Ptz_new)
        Ptz = Ptz_new

    if not diag.converged:
        log.warning(
            "ADMM stopped after %d iterations (primal %.3g, dual %.3g)",
            diag.iterations, diag.primal_residual, diag.dual_residual,
        )
    return mats.unflatten(w_best), diag


def reference_fit(mats, tol=1e-6, max_iters=500, penalty=0.0, w0=None):
    """Minimize ``f`` by damped Newton steps with a feasibility-preserving line search.

    The ``-2 log`` terms act as the barrier keeping ``P' w > 0``.  ``w0``
    overrides the default start (:meth:`DesignMatrices.start`) and must be
    feasible.  Returns ``(CnrParams, info)`` where ``info`` holds the final
    gradient norm and the iteration count.
    """
    w = mats.start() if w0 is None else np.array(w0, dtype=float)
    Pp = mats.Pprime
    q = Pp @ w
    if not np.all(q > 0):
        raise InfeasibleStart("starting point violates P' w > 0")
    f = objective(mats, w, penalty)
    m = w.size
    grad_norm = np.inf
    for it in range(max_iters):
        grad = gradient(mats, w, penalty)
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol:
            break
        Hess = 2.0 * mats.P + 2.0 * (Pp.T * (1.0 / q**2)) @ Pp + 2.0 * penalty * np.eye(m)
        scale = np.trace(Hess) / m
        try:
            step = -np.linalg.solve(Hess + 1e-14 * scale * np.eye(m), grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(Hess, grad, rcond=None)[0]
        if grad @ step >= 0:
            step = -grad
        dq = Pp @ step
        t = 1.0
        neg = dq < 0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(-q[neg] / dq[neg])))
        slope = float(grad @ step)
        while True:
            w_new = w + t * step
            f_new = objective(mats, w_new, penalty)
            if f_new <= f + 1e-4 * t * slope or t < 1e-16:
                break
            t *= 0.5
        if not f_new <= f:
            break
        w, f = w_new, f_new
        q = Pp @ w
    return mats.unflatten(w), {"iterations": it, "grad_norm": grad_norm, "objective": f}


def fit(X, y, dictionary, feature_map="identity", config=None):
    """Assemble and fit in one call."""
    return admm_fit(assemble(X, y, dictionary, feature_map), config)
