"""Datasets, synthetic generators and household power-series ingestion."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model
from .dictionary import PiecewiseLinear
from .errors import InfeasiblePoint, InsufficientData, InvalidInput, ParseError, SchemaError
from .model import CnrParams

__all__ = [
    "Dataset",
    "LrTruth",
    "MrTruth",
    "GeneratorSpec",
    "draw_lr_truth",
    "draw_cnr_truth",
    "draw_mr_truth",
    "gen_lr",
    "gen_cnr",
    "gen_mr",
    "generate",
    "truth_log_density",
    "truth_mean",
    "load_series",
    "windows",
    "split",
]

log = logging.getLogger(__name__)

MR_NOISE = 0.2


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    tag: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise InvalidInput(f"{X.shape[0]} feature rows but {y.size} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInput("dataset entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.size

    @property
    def k(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.y[idx], self.tag)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.k)] + ["y"])
            for row, label in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])

    @classmethod
    def from_csv(cls, path, tag=""):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "y":
                raise SchemaError(f"{path}: last column must be 'y'")
            rows = [[float(v) for v in r] for r in reader if r]
        arr = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls(arr[:, :-1], arr[:, -1], tag)


@dataclass(frozen=True)
class LrTruth:
    w: np.ndarray
    sigma: float = 1.0


@dataclass(frozen=True)
class MrTruth:
    a: np.ndarray
    noise: float = MR_NOISE


@dataclass(frozen=True)
class GeneratorSpec:
    """Generating model for one synthetic scenario.

    ``truth`` is an :class:`LrTruth`, a :class:`~cnr.model.CnrParams` or an
    :class:`MrTruth` depending on ``kind`` (``"lr"``, ``"cnr"`` or ``"mr"``).
    """

    kind: str
    k: int
    truth: object
    seed: int = None

    def __post_init__(self):
        if self.kind not in ("lr", "cnr", "mr"):
            raise InvalidInput(f"unknown generator kind {self.kind!r}")

    @classmethod
    def random(cls, kind, k, rng, **kwargs):
        draw = {"lr": draw_lr_truth, "cnr": draw_cnr_truth, "mr": draw_mr_truth}[kind]
        return cls(kind, k, draw(k, rng, **kwargs))


def draw_lr_truth(k, rng, sigma=1.0):
    return LrTruth(rng.standard_normal(k), float(sigma))


def draw_cnr_truth(k, rng, knots=(-1.0, 0.0, 1.0), slope_range=(0.5, 2.0)):
    """Random valid truth on a fixed knot grid.

    Slope entries of ``b`` are uniform on ``slope_range``; slope rows of ``A``
    are uniform on ``[-c, c]`` with ``c = 0.5 / (3 sqrt(k))``.  The location row
    ``A[0]`` is ``N(0, 1/k)`` per entry and ``b[0]`` is ``N(0, 1/4)``.
    """
    dictionary = PiecewiseLinear.from_points(knots)
    dim = dictionary.dim
    c = 0.5 / (math.sqrt(k) * 3.0)
    A = np.empty((dim, k))
    A[0] = rng.standard_normal(k) / math.sqrt(k)
    A[1:] = rng.uniform(-c, c, size=(dim - 1, k))
    b = np.empty(dim)
    b[0] = 0.5 * rng.standard_normal()
    b[1:] = rng.uniform(*slope_range, size=dim - 1)
    return CnrParams(A, b, dictionary)


def draw_mr_truth(k, rng, noise=MR_NOISE):
    return MrTruth(rng.standard_normal(k), float(noise))


def _features(rng, n, k):
    return rng.standard_normal((n, k))


def gen_lr(spec, n, rng):
    X = _features(rng, n, spec.k)
    t = spec.truth
    y = X @ t.w + t.sigma * rng.standard_normal(n)
    return Dataset(X, y, "lr")


def gen_cnr(spec, n, rng, max_rounds=1000):
    """Inverse-transform samples from the CNR truth.

    Feature draws at which the truth is not monotone are rejected and redrawn;
    the rejection rate is stored in ``info["rejection_rate"]``.
    """
    truth = spec.truth
    X = np.empty((0, spec.k))
    drawn = 0
    for _ in range(max_rounds):
        need = n - X.shape[0]
        if need <= 0:
            break
        cand = _features(rng, need, spec.k)
        drawn += need
        X = np.vstack([X, cand[model.validity(truth, cand)]])
    else:
        raise InfeasiblePoint("CNR truth is invalid on almost every feature draw")
    rate = 1.0 - n / drawn if drawn else 0.0
    if rate > 0:
        log.debug("gen_cnr rejected %.4f of feature draws", rate)
    y = model.sample(truth, X, rng)
    return Dataset(X, y, "cnr", {"rejection_rate": rate})


def gen_mr(spec, n, rng):
    X = _features(rng, n, spec.k)
    t = spec.truth
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y = sign * (X @ t.a) + t.noise * rng.standard_normal(n)
    return Dataset(X, y, "mr")


def generate(spec, n, rng):
    return {"lr": gen_lr, "cnr": gen_cnr, "mr": gen_mr}[spec.kind](spec, n, rng)


def truth_log_density(spec, X, y):
    """Log density of each ``(x_i, y_i)`` under the generating model."""
    t = spec.truth
    if spec.kind == "lr":
        r = (y - X @ t.w) / t.sigma
        return -0.5 * r * r - math.log(t.sigma) - model.LOG_SQRT_2PI
    if spec.kind == "cnr":
        return model.log_density(t, X, y)
    m = X @ t.a
    lp = -0.5 * ((y - m) / t.noise) ** 2
    lm = -0.5 * ((y + m) / t.noise) ** 2
    return np.logaddexp(lp, lm) + math.log(0.5) - math.log(t.noise) - model.LOG_SQRT_2PI


def truth_mean(spec, X):
    t = spec.truth
    if spec.kind == "lr":
        return X @ t.w
    if spec.kind == "cnr":
        return model.posterior_mean(t, X)
    return np.zeros(X.shape[0])


def load_series(path, column="Global_active_power", delimiter=";", missing="?"):
    """Read one numeric column of a delimited text file with a header row.

    Missing entries (``missing`` token or empty field) become ``nan``.
    """
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if column not in header:
            raise SchemaError(f"{path}: no column {column!r} in header {header}")
        col = header.index(column)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}", lineno)
            field_ = row[col].strip()
            if field_ == missing or field_ == "":
                values.append(np.nan)
                continue
            try:
                values.append(float(field_))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: cannot parse {field_!r}", lineno) from None
    return np.array(values, dtype=float)


def windows(series, n, rng, length=10):
    """``n`` random complete windows; the first ``length - 1`` entries predict the last.

    Start offsets are drawn uniformly, with replacement, among windows free of
    missing values.
    """
    series = np.asarray(series, dtype=float)
    if series.size < length:
        raise InsufficientData(f"series of length {series.size} is shorter than one window")
    missing = np.isnan(series).astype(int)
    counts = np.convolve(missing, np.ones(length, dtype=int), mode="valid")
    starts = np.flatnonzero(counts == 0)
    if starts.size == 0:
        raise InsufficientData("no window free of missing values")
    picks = starts[rng.integers(0, starts.size, size=n)]
    W = series[picks[:, None] + np.arange(length)]
    return Dataset(W[:, :-1], W[:, -1], "household")


def split(dataset, rng, n_test=500):
    """Uniform random train/test partition with exactly ``n_test`` test rows."""
    if dataset.n <= n_test:
        raise InsufficientData(f"{dataset.n} samples cannot hold a test set of {n_test}")
    perm = rng.permutation(dataset.n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))
