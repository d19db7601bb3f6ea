"""Command-line entry point: ``python -m cnr <scenario> [flags]``."""

import argparse
import json
import logging
import sys

from .errors import CnrError
from .experiments import SCENARIOS, TrialConfig, aggregate, density_experiment, run_experiment, write_table
from .solver import AdmmConfig

log = logging.getLogger("cnr")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _quantiles(text):
    try:
        qs = [float(q) for q in text.split(",") if q.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad quantile list {text!r}") from None
    if not qs or any(not 0 < q < 1 for q in qs) or any(b <= a for a, b in zip(qs, qs[1:])):
        raise argparse.ArgumentTypeError("quantiles must be ascending values inside (0, 1)")
    return tuple(qs)


def build_parser():
    p = argparse.ArgumentParser(prog="cnr", description="Repeated-trial LR / GR / CNR experiments.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--n-train", type=_positive_int, action="append", metavar="N",
                   help="training size; repeat for several (default 50 200 1000 5000)")
    p.add_argument("--n-test", type=_positive_int, default=500)
    p.add_argument("--trials", type=_positive_int, default=2000)
    p.add_argument("--quantiles", type=_quantiles, default=(0.3, 0.5, 0.7),
                   help="comma-separated knot quantiles of the training labels")
    p.add_argument("--true-knots", action=argparse.BooleanOptionalAction, default=None,
                   help="use the generating knots on CNR data (default on for synth-cnr)")
    p.add_argument("--feature-map", choices=("identity", "quadratic"), default=None)
    p.add_argument("--k", type=_positive_int, default=5, help="synthetic feature dimension")
    p.add_argument("--rho", type=_positive_float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--data", metavar="PATH", help="household power file (';'-separated, '?' missing)")
    p.add_argument("--column", default="Global_active_power")
    p.add_argument("--out", metavar="PATH", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def _config(args, series):
    admm = None
    if args.rho is not None or args.max_iters is not None or args.tol != 1e-6:
        probe = TrialConfig(args.scenario, trials=1, series=series)
        base = probe.admm
        admm = AdmmConfig(
            rho=args.rho if args.rho is not None else base.rho,
            max_iters=args.max_iters if args.max_iters is not None else base.max_iters,
            tol_primal=args.tol,
            tol_dual=args.tol,
        )
    return TrialConfig(
        scenario=args.scenario,
        n_train=tuple(args.n_train or (50, 200, 1000, 5000)),
        n_test=args.n_test,
        trials=args.trials,
        quantiles=args.quantiles,
        use_true_knots=args.true_knots,
        admm=admm,
        seed=args.seed,
        k=args.k,
        feature_map=args.feature_map,
        series=series,
        workers=args.workers,
        output=args.out,
    )


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run_density(config, args):
    import io

    curve, truth, info, _ = density_experiment(config, n_train=config.n_train[-1], trial_index=0)
    buf = io.StringIO()
    if args.format == "json":
        json.dump({**info, "y": curve.y.tolist(), "density": curve.density.tolist(),
                   "true_density": truth.tolist()}, buf)
        buf.write("\n")
    else:
        curve.to_csv(buf, {"true_density": truth})
    _emit(buf.getvalue(), args.out)
    log.info("density at test point %d, a'x = %.3f, fallback=%s",
             info["test_index"], info["center"], info["fallback"])


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.max_iters is not None and args.max_iters < 0:
        parser.error("--max-iters must be non-negative")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        series = None
        if args.scenario == "household":
            if not args.data:
                parser.error("household needs --data PATH")
            from .data import load_series

            series = load_series(args.data, column=args.column)
        config = _config(args, series)
        if args.scenario == "density":
            _run_density(config, args)
            return 0
        reports = run_experiment(config)
        rows = aggregate(reports)
        excluded = [r for r in reports if r.excluded]
        for r in excluded:
            log.warning("excluded trial %d (n=%d): %s", r.trial, r.n_train, r.excluded)
        import io

        buf = io.StringIO()
        write_table(rows, buf, args.format)
        _emit(buf.getvalue(), args.out)
        if args.verbose:
            detail = json.dumps([r.to_dict() for r in reports], indent=1) + "\n"
            if args.out:
                _emit(detail, args.out + ".trials.json")
            else:
                sys.stdout.write(detail)
    except (CnrError, OSError) as exc:
        print(f"cnr: error: {exc}", file=sys.stderr)
        return 1
    return 0
