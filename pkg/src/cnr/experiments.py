"""Repeated-trial experiments comparing LR, GR and CNR.

One trial draws (or windows) a dataset, splits off a test set, fits the three
models on the training part and scores them on the test part.  CNR and GR
predictions use the closed-form posterior mean; at test points where either is
not monotone, the point is scored under the fitted LR model instead.
"""

import concurrent.futures
import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import data, model
from .baselines import gr_fit, lr_fit, lr_log_density, lr_predict, score_with_fallback
from .dictionary import PiecewiseLinear, knots_from_quantiles
from .errors import CnrError, InsufficientData, InvalidInput
from .solver import AdmmConfig, admm_fit, assemble

__all__ = [
    "SCENARIOS",
    "MODELS",
    "TrialConfig",
    "ModelScore",
    "TrialReport",
    "fit_models",
    "run_trial",
    "run_experiment",
    "aggregate",
    "DensityCurve",
    "density_curve",
    "pick_bimodal_point",
    "TABLE_COLUMNS",
    "write_table",
    "table_text",
    "density_experiment",
    "local_maxima",
    "mode_summary",
]

log = logging.getLogger(__name__)

SCENARIOS = ("synth-lr", "synth-cnr", "synth-mr", "household", "density")
MODELS = ("LR", "GR", "CNR")
TABLE_COLUMNS = (
    "model", "n_train", "nll_mean", "nll_std", "logmse_mean", "logmse_std",
    "invalid_frac", "clairvoyant_nll",
)

_KIND = {"synth-lr": "lr", "synth-cnr": "cnr", "synth-mr": "mr", "density": "mr"}

# Per-scenario defaults.  MR needs a nonlinear feature map: its conditional law
# depends on x only through |a'x|, so every model linear in x collapses to the
# (Gaussian) marginal of y.  rho=10 cuts the ADMM iteration count ~5x there;
# with m > n (small n) the fit is unbounded and only the iteration cap stops it.
SCENARIO_DEFAULTS = {
    "synth-lr": {"feature_map": "identity", "rho": 1.0, "use_true_knots": False},
    "synth-cnr": {"feature_map": "identity", "rho": 1.0, "use_true_knots": True},
    "synth-mr": {"feature_map": "quadratic", "rho": 10.0, "use_true_knots": False, "max_iters": 10_000},
    "density": {"feature_map": "quadratic", "rho": 10.0, "use_true_knots": False, "max_iters": 10_000},
    "household": {"feature_map": "identity", "rho": 1.0, "use_true_knots": False},
}


@dataclass
class TrialConfig:
    scenario: str
    n_train: tuple = (50, 200, 1000, 5000)
    n_test: int = 500
    trials: int = 2000
    quantiles: tuple = (0.3, 0.5, 0.7)
    use_true_knots: bool = None
    admm: AdmmConfig = None
    seed: int = 0
    k: int = 5
    feature_map: str = None
    series: np.ndarray = field(default=None, repr=False)
    workers: int = 1
    output: str = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidInput(f"unknown scenario {self.scenario!r}")
        self.n_train = tuple(int(n) for n in np.atleast_1d(self.n_train))
        if not self.n_train or min(self.n_train) < 2 or self.n_test < 1 or self.trials < 1:
            raise InvalidInput("n_train (>= 2), n_test and trials must be positive")
        qs = np.asarray(self.quantiles, dtype=float)
        if qs.size == 0 or np.any((qs <= 0) | (qs >= 1)) or np.any(np.diff(qs) <= 0):
            raise InvalidInput("quantiles must be ascending inside (0, 1)")
        self.quantiles = tuple(qs.tolist())
        defaults = SCENARIO_DEFAULTS[self.scenario]
        if self.use_true_knots is None:
            self.use_true_knots = defaults["use_true_knots"]
        if self.feature_map is None:
            self.feature_map = defaults["feature_map"]
        if self.admm is None:
            self.admm = AdmmConfig(rho=defaults["rho"], max_iters=defaults.get("max_iters", 50_000))
        if self.scenario == "household" and self.series is None:
            raise InvalidInput("the household scenario needs a series")

    @property
    def synthetic(self):
        return self.scenario in _KIND


@dataclass
class ModelScore:
    nll_test: float
    log_mse: float
    invalid_fraction: float = 0.0
    converged: bool = True
    iterations: int = 0
    model_points: int = 0
    fallback_points: int = 0


@dataclass
class TrialReport:
    scenario: str
    n_train: int
    trial: int
    seed: int
    models: dict = field(default_factory=dict)
    clairvoyant_nll: float = None
    excluded: str = None

    def to_dict(self):
        return asdict(self)


def _rngs(config, trial_index, n_train):
    base = config.seed + trial_index
    truth = np.random.default_rng(np.random.SeedSequence(base, spawn_key=(0,)))
    sample = np.random.default_rng(np.random.SeedSequence(base, spawn_key=(1, n_train)))
    return truth, sample


def _draw(config, trial_index, n_train):
    truth_rng, rng = _rngs(config, trial_index, n_train)
    spec = None
    if config.synthetic:
        spec = data.GeneratorSpec.random(_KIND[config.scenario], config.k, truth_rng)
        full = data.generate(spec, n_train + config.n_test, rng)
    else:
        full = data.windows(config.series, n_train + config.n_test, rng)
    train, test = data.split(full, rng, config.n_test)
    return spec, train, test


def _knots(config, spec, train):
    if config.use_true_knots and spec is not None and spec.kind == "cnr":
        return spec.truth.dictionary.grid
    return knots_from_quantiles(train.y, config.quantiles)


def _log_mse(y, pred):
    return float(math.log(np.mean((y - pred) ** 2)))


def fit_models(config, train, spec=None):
    """Fit LR, GR and CNR on ``train``.  Returns ``(lr, {name: (params, diagnostics)})``."""
    lr = lr_fit(train.X, train.y, intercept=not config.synthetic)
    gr = gr_fit(train.X, train.y, config.admm, config.feature_map, fallback=lr)
    dictionary = PiecewiseLinear(_knots(config, spec, train))
    cnr, diag = admm_fit(assemble(train.X, train.y, dictionary, config.feature_map), config.admm)
    return lr, {"GR": (gr.inner, gr.diagnostics), "CNR": (cnr, diag)}


def run_trial(config, trial_index, n_train=None):
    """Run one seeded trial; failures mark the report as excluded with a reason."""
    n_train = config.n_train[0] if n_train is None else int(n_train)
    report = TrialReport(config.scenario, n_train, trial_index, config.seed + trial_index)
    try:
        spec, train, test = _draw(config, trial_index, n_train)
        lr, fitted = fit_models(config, train, spec)
    except (CnrError, np.linalg.LinAlgError) as exc:
        report.excluded = f"{type(exc).__name__}: {exc}"
        log.warning("trial %d (n=%d) excluded: %s", trial_index, n_train, report.excluded)
        return report

    pred = lr_predict(lr, test.X)
    report.models["LR"] = ModelScore(
        nll_test=float(-np.mean(lr_log_density(lr, test.X, test.y))),
        log_mse=_log_mse(test.y, pred),
        model_points=test.n,
    )
    for name, (params, diag) in fitted.items():
        scores = score_with_fallback(params, lr, test.X, test.y)
        report.models[name] = ModelScore(
            nll_test=float(np.mean(scores.nll)),
            log_mse=_log_mse(test.y, scores.prediction),
            invalid_fraction=scores.fallback_count / test.n,
            converged=bool(diag.converged),
            iterations=int(diag.iterations),
            model_points=int(np.sum(scores.valid)),
            fallback_points=scores.fallback_count,
        )
    if spec is not None:
        report.clairvoyant_nll = float(-np.mean(data.truth_log_density(spec, test.X, test.y)))
    return report


def _run_one(args):
    config, trial_index, n_train = args
    return run_trial(config, trial_index, n_train)


def run_experiment(config, progress=None):
    """All ``trials x n_train`` reports, sorted by ``(n_train, trial)``."""
    jobs = [(config, t, n) for n in config.n_train for t in range(config.trials)]
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(config.workers) as pool:
            reports = list(pool.map(_run_one, jobs, chunksize=4))
    else:
        reports = []
        for job in jobs:
            reports.append(_run_one(job))
            if progress:
                progress(len(reports), len(jobs))
    reports.sort(key=lambda r: (r.n_train, r.trial))
    return reports


def aggregate(reports):
    """Per ``(model, n_train)`` means and population standard deviations.

    Returns a list of row dicts with the :data:`TABLE_COLUMNS` plus ``trials``
    (included count), ``excluded``, ``nll_se`` and ``clairvoyant_std``.
    """
    groups = {}
    for r in reports:
        groups.setdefault(r.n_train, []).append(r)
    if not groups:
        raise InsufficientData("no trial reports to aggregate")
    rows = []
    for n_train in sorted(groups):
        group = groups[n_train]
        kept = [r for r in group if r.excluded is None]
        if not kept:
            raise InsufficientData(f"every trial at n_train={n_train} was excluded")
        clair = [r.clairvoyant_nll for r in kept if r.clairvoyant_nll is not None]
        for name in MODELS:
            nll = np.array([r.models[name].nll_test for r in kept])
            lmse = np.array([r.models[name].log_mse for r in kept])
            inv = np.array([r.models[name].invalid_fraction for r in kept])
            rows.append({
                "model": name,
                "n_train": n_train,
                "nll_mean": float(nll.mean()),
                "nll_std": float(nll.std()),
                "logmse_mean": float(lmse.mean()),
                "logmse_std": float(lmse.std()),
                "invalid_frac": float(inv.mean()),
                "clairvoyant_nll": float(np.mean(clair)) if clair else None,
                "clairvoyant_std": float(np.std(clair)) if clair else None,
                "nll_se": float(nll.std() / math.sqrt(nll.size)),
                "trials": len(kept),
                "excluded": len(group) - len(kept),
                "unconverged": sum(not r.models[name].converged for r in kept),
            })
    return rows


def write_table(rows, fh, fmt="csv"):
    if fmt == "json":
        json.dump(rows, fh, indent=2)
        fh.write("\n")
        return
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                         for c in TABLE_COLUMNS])


def table_text(rows, fmt="csv"):
    buf = io.StringIO()
    write_table(rows, buf, fmt)
    return buf.getvalue()


@dataclass
class DensityCurve:
    y: np.ndarray
    density: np.ndarray
    fallback: bool = False

    def to_csv(self, fh, extra=None):
        writer = csv.writer(fh, lineterminator="\n")
        extra = extra or {}
        writer.writerow(["y", "density", *extra])
        cols = [self.y, self.density, *extra.values()]
        for vals in zip(*cols):
            writer.writerow([repr(float(v)) for v in vals])


def _grid_span(params, x):
    u = model.coefficients(params, x)[0]
    if isinstance(params.dictionary, PiecewiseLinear):
        pts = params.dictionary.grid.points
        lo, hi = pts[0] - 4.0 / u[1], pts[-1] + 4.0 / u[-1]
    else:
        mean, sd = -u[0] / u[1], 1.0 / u[1]
        lo, hi = mean - 4.0 * sd, mean + 4.0 * sd
    # widen so the latent value covers [-6, 6] as well
    lo = min(lo, model.inverse_transform(params, x, -6.0))
    hi = max(hi, model.inverse_transform(params, x, 6.0))
    return lo, hi


def density_curve(params, x, fallback=None, points=None, max_points=1_000_001):
    """Density of ``y | x`` on an even grid spanning the fitted knots and tails.

    The grid covers ``[p_0 - 4/alpha_0, p_L + 4/alpha_{L+1}]``, widened where
    needed so that ``g`` runs over ``[-6, 6]``.  By default (at least 2001
    points) the step resolves the steepest segment and keeps the trapezoid error
    from the density jumps at the knots below ~5e-4.  If ``params`` is not
    monotone at ``x``, the Gaussian curve of the ``fallback`` LR model is
    emitted instead and flagged.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if model.is_valid(params, x):
        lo, hi = _grid_span(params, x)
        if points is None:
            step = 0.05 / float(np.max(model.slopes(params, x)))
            if isinstance(params.dictionary, PiecewiseLinear):
                pts = params.dictionary.grid.points
                left = model.density(params, x, np.nextafter(pts, -np.inf))
                jump = float(np.sum(np.abs(model.density(params, x, pts) - left)))
                if jump > 0:
                    step = min(step, 1e-3 / jump)
            points = int(min(max_points, max(2001, math.ceil((hi - lo) / step) + 1)))
        y = np.linspace(lo, hi, points)
        return DensityCurve(y, model.density(params, x, y))
    if fallback is None:
        raise InvalidInput("model invalid at x and no fallback supplied")
    mean, sd = lr_predict(fallback, x), math.sqrt(fallback.sigma2)
    y = np.linspace(mean - 6 * sd, mean + 6 * sd, points or 2001)
    return DensityCurve(y, np.exp(lr_log_density(fallback, x, y)), fallback=True)


def local_maxima(values):
    """Indices of strict-left, weak-right local maxima of a sampled curve."""
    v = np.asarray(values)
    return np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1


def mode_summary(curve, center, tol=0.3, prominence=0.1):
    """Local maxima of a density curve against the two expected modes ``+-center``.

    ``literal`` holds when the curve has exactly two local maxima, one within
    ``tol`` of each of ``-|center|`` and ``+|center|``, with a local minimum
    between them.  ``prominent`` applies the same test to the peaks whose
    prominence exceeds ``prominence`` times the curve maximum.
    """
    from scipy.signal import find_peaks

    m = abs(float(center))
    dens = curve.density

    def check(idx):
        if idx.size != 2:
            return False
        lo, hi = sorted(curve.y[idx])
        between = dens[idx.min():idx.max() + 1]
        return abs(lo + m) <= tol and abs(hi - m) <= tol and between.min() < dens[idx].min()

    maxima = local_maxima(dens)
    peaks, _ = find_peaks(dens, prominence=prominence * dens.max())
    return {
        "maxima": curve.y[maxima].tolist(),
        "prominent_maxima": curve.y[peaks].tolist(),
        "literal": check(maxima),
        "prominent": check(peaks),
    }


def pick_bimodal_point(params, X, centers):
    """Index of a valid row of ``X`` with ``|center| >= 1`` nearest the outer-knot half-span.

    The fitted modes of a piecewise model sit close to its outer knots, so the
    most readable curve comes from a point whose true modes ``+-center`` line up
    with them.  Returns ``None`` when no row qualifies.
    """
    ok = model.validity(params, X) & (np.abs(centers) >= 1.0)
    if not np.any(ok):
        return None
    pts = params.dictionary.grid.points
    half = 0.5 * (pts[-1] - pts[0])
    cand = np.flatnonzero(ok)
    return int(cand[np.argmin(np.abs(np.abs(centers[cand]) - half))])


def density_experiment(config, n_train=None, trial_index=0, points=None):
    """Fit CNR on MR data and return ``(curve, info)`` for one test point."""
    n_train = config.n_train[0] if n_train is None else n_train
    cfg = replace(config, scenario="density") if config.scenario != "density" else config
    spec, train, test = _draw(cfg, trial_index, n_train)
    lr, fitted = fit_models(cfg, train, spec)
    cnr = fitted["CNR"][0]
    centers = test.X @ spec.truth.a
    i = pick_bimodal_point(cnr, test.X, centers)
    if i is None:
        i = int(np.argmax(np.abs(centers)))
    curve = density_curve(cnr, test.X[i], lr, points)
    truth = np.exp(data.truth_log_density(spec, np.repeat(test.X[i:i + 1], curve.y.size, 0), curve.y))
    modes = mode_summary(curve, centers[i])
    info = {
        "modes": modes["maxima"],
        "prominent_modes": modes["prominent_maxima"],
        "test_index": i,
        "x": test.X[i].tolist(),
        "center": float(centers[i]),
        "fallback": curve.fallback,
        "knots": cnr.dictionary.grid.points.tolist(),
        "converged": bool(fitted["CNR"][1].converged),
    }
    return curve, truth, info, (cnr, lr, spec, test)
