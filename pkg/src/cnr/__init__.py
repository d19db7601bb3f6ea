"""Conditional nonparanormal regression: a monotone piecewise-linear transform
of the label, affine in its parameters, that is standard normal given the
features.  Fitting is a convex maximum-likelihood problem solved by ADMM."""

from .dictionary import Affine, KnotGrid, PiecewiseLinear, knots_from_quantiles
from .errors import (
    CnrError,
    DegenerateKnots,
    Diverged,
    InfeasiblePoint,
    InfeasibleStart,
    InsufficientData,
    InvalidInput,
    ParseError,
    SchemaError,
    ZeroVariance,
)
from .model import CnrParams, density, is_valid, log_density, posterior_mean, transform
from .solver import AdmmConfig, admm_fit, assemble, fit, reference_fit

__version__ = "0.1.0"
