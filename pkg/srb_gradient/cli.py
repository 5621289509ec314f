"""srb-gradient command line: one subcommand per experiment.

Results go to --output (stdout by default) as CSV with a ``# config:`` header
line, or as JSON with the resolved config embedded. Logs go to stderr.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import csv
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from srb_gradient import __version__
from srb_gradient.config_loader import RunConfig, load_config
from srb_gradient.curvature import binned_g_1d, convergence_diagnostic, run_algorithm1
from srb_gradient.ensemble import run_tasks
from srb_gradient.errors import ConfigError, ConfigValidationError, EmptyRow, NumericalError
from srb_gradient.hyperbolicity import AngleSeries, stable_unstable_angles
from srb_gradient.logging_setup import setup_logging
from srb_gradient.maps import MapSystem, build_map
from srb_gradient.measure import (
    IntegrationPair,
    appendix_fd_1d,
    binned_error_sweep,
    conditional_fd_g,
    fd_log_gradient,
    gradient_profile,
    histogram_srb,
    histogram_srb_ensemble,
    mc_integrate_pair,
    profile_correlation,
)
from srb_gradient.observables import get_observable
from srb_gradient.rng import TRAJECTORY_STREAM_BASE
from srb_gradient.tangent import benettin_le, detect_unstable_dim

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def fmt(value: Any) -> str:
    """17 significant digits for floats so CSV round-trips exactly"""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _count(text: str) -> int:
    """Accept 100000 as well as 1e5"""
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer count, got {text}")
    return int(value)


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _count_list(text: str) -> List[int]:
    return [_count(v) for v in text.split(",") if v.strip()]


def _x0(text: str):
    return "random" if text == "random" else _float_list(text)


def _m(text: str):
    return "auto" if text == "auto" else int(text)


# -- resolution -------------------------------------------------------------

def resolve_map(config: RunConfig) -> MapSystem:
    return build_map(config.map, config.params)


def resolve_x0(config: RunConfig, map_system: MapSystem) -> np.ndarray:
    if config.x0 == "random":
        return map_system.random_point(config.seed)
    return map_system.make_point(config.x0)


def resolve_m(config: RunConfig, map_system: MapSystem, x0: np.ndarray) -> int:
    """Explicit m, or the count of positive exponents from a Benettin run"""
    if config.m != "auto":
        m = int(config.m)
    else:
        spectrum = benettin_le(map_system, x0, map_system.dim, config.le_steps,
                               config.burn_in, config.seed, config.progress_every)
        m = detect_unstable_dim(spectrum, config.gap_tol)
        logger.info(f"Detected unstable dimension m = {m}")
    if not 1 <= m <= map_system.dim:
        raise ConfigValidationError(f"m must lie in 1..{map_system.dim} for {map_system.name}, got {m}")
    return m


def default_bins(map_system: MapSystem, bins: Optional[Sequence[int]]) -> List[int]:
    if bins:
        if len(bins) == 1:
            return list(bins) * map_system.dim
        if len(bins) != map_system.dim:
            raise ConfigValidationError(f"{map_system.name} needs {map_system.dim} bin counts, got {len(bins)}")
        return list(bins)
    return [256 if map_system.dim <= 2 else 64] * map_system.dim


# -- output -----------------------------------------------------------------

@contextmanager
def open_output(path: str):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def config_line(config: RunConfig) -> str:
    return "# config: " + json.dumps(config.resolved(), sort_keys=True) + "\n"


def write_csv(out, config: RunConfig, header: Sequence[str], rows: Iterable[Sequence[Any]],
              trailer: Optional[Dict[str, Any]] = None) -> None:
    out.write(config_line(config))
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    if trailer is not None:
        out.write("# summary: " + json.dumps(trailer, sort_keys=True) + "\n")


def write_json(out, config: RunConfig, payload: Dict[str, Any]) -> None:
    document = {"config": config.resolved(), **payload}
    out.write(json.dumps(document, indent=2, sort_keys=True) + "\n")


# -- picklable ensemble tasks -----------------------------------------------

def _mc_task(map_name: str, params: List[float], observable: str, m: int, n_steps: int,
             burn_in: int, seed: int, x0: Optional[List[float]]) -> IntegrationPair:
    map_system = build_map(map_name, params)
    start = None if x0 is None else np.asarray(x0)
    return mc_integrate_pair(map_system, get_observable(observable), m, n_steps, burn_in, seed, start)


def _angle_task(map_system: MapSystem, x0: np.ndarray, mu: int, n_steps: int, burn_in: int,
                seed: int, window: int) -> AngleSeries:
    return stable_unstable_angles(map_system, x0, mu, n_steps, burn_in, seed, window)


# -- subcommands ------------------------------------------------------------

def cmd_le(config: RunConfig) -> int:
    map_system = resolve_map(config)
    x0 = resolve_x0(config, map_system)
    count_m = config.count_m or map_system.dim
    spectrum = benettin_le(map_system, x0, count_m, config.n_steps, config.burn_in,
                           config.seed, config.progress_every)
    payload = {**map_system.describe(), **spectrum.to_dict(),
               "unstable_dim": detect_unstable_dim(spectrum, config.gap_tol)}
    with open_output(config.output_path) as out:
        write_json(out, config, payload)
    return EXIT_OK


def cmd_density_gradient(config: RunConfig) -> int:
    map_system = resolve_map(config)
    x0 = resolve_x0(config, map_system)
    m = resolve_m(config, map_system, x0)

    if not config.rows:
        header = ["step"] + [f"x{i + 1}" for i in range(map_system.dim)] + [f"g{i + 1}" for i in range(m)]
        rows = ([s.step, *s.point, *s.g]
                for s in run_algorithm1(map_system, x0, m, config.n_steps, config.burn_in, config.seed))
        with open_output(config.output_path) as out:
            write_csv(out, config, header, rows)
        return EXIT_OK

    # row overlay: bin-averaged g^(1) against the finite-difference gradient
    if map_system.dim != 2:
        raise ConfigValidationError("--rows needs a 2-D map")
    bins = default_bins(map_system, config.bins)
    profile = gradient_profile(map_system, x0, m, config.n_steps, bins, config.burn_in, config.seed)
    overlay = []
    correlations = {}
    for row in config.rows:
        if row >= bins[1]:
            raise ConfigValidationError(f"row {row} outside 0..{bins[1] - 1}")
        try:
            fd = conditional_fd_g(profile.density, row)
            correlations[str(row)] = profile_correlation(profile, row)
        except EmptyRow as e:
            logger.warning(f"Skipping row {row}: {e}")
            continue
        g_fd = np.full(bins[0], np.nan)
        g_fd[fd.indices] = fd.g
        averages = profile.row_average(row)
        centers = profile.density.centers(0)
        for i in range(bins[0]):
            overlay.append([row, centers[i], profile.density.counts[i, row], averages[i], g_fd[i]])
    with open_output(config.output_path) as out:
        write_csv(out, config, ["row", "bin_center", "count", "g_avg", "g_fd"], overlay,
                  {"correlation": correlations})
    return EXIT_OK


def cmd_convergence(config: RunConfig) -> int:
    map_system = resolve_map(config)
    x0 = resolve_x0(config, map_system)
    m = resolve_m(config, map_system, x0)
    rows = convergence_diagnostic(map_system, x0, m, config.n_steps, config.seed, config.seed2)
    with open_output(config.output_path) as out:
        write_csv(out, config, ["k", "norm"], rows)
    return EXIT_OK


def _mc_batch(config: RunConfig, map_system: MapSystem, m: int, n_steps: int) -> List[IntegrationPair]:
    # a user-given x0 only applies to single-seed runs; seeds > 1 start from their own streams
    x0 = None
    if config.seeds == 1 and config.x0 != "random":
        x0 = list(map_system.make_point(config.x0))
    tasks = [(config.map, list(config.params), config.observable, m, n_steps, config.burn_in,
              config.seed + i, x0)
             for i in range(config.seeds)]
    return run_tasks(_mc_task, tasks, config.workers)


def _merge_pairs(pairs: List[IntegrationPair]) -> IntegrationPair:
    out = pairs[0]
    for p in pairs[1:]:
        out = out.merge(p)
    return out


def cmd_mc_integrate(config: RunConfig) -> int:
    map_system = resolve_map(config)
    get_observable(config.observable)
    m = resolve_m(config, map_system, resolve_x0(config, map_system))

    sizes = config.sweep or [config.n_steps]
    with open_output(config.output_path) as out:
        if config.sweep:
            out.write(config_line(config))
        for n in sizes:
            pairs = _mc_batch(config, map_system, m, n)
            merged = _merge_pairs(pairs)
            payload = {**merged.to_dict(), "n_steps": n, "m": m,
                       "per_seed": [{"seed": config.seed + i, **p.to_dict()} for i, p in enumerate(pairs)]}
            logger.info(f"N={n}: lhs {merged.lhs.value:.6g} +- {merged.lhs.std_error:.2g}, "
                        f"rhs {merged.rhs.value:.6g} +- {merged.rhs.std_error:.2g}")
            if config.sweep:
                out.write(json.dumps(payload, sort_keys=True) + "\n")
            else:
                write_json(out, config, payload)
    return EXIT_OK


def cmd_histogram(config: RunConfig) -> int:
    map_system = resolve_map(config)
    bins = default_bins(map_system, config.bins)
    if config.trajectories > 1:
        density = histogram_srb_ensemble(map_system, config.n_steps, bins, config.burn_in,
                                         config.trajectories, config.seed, config.workers)
    else:
        density = histogram_srb(map_system, resolve_x0(config, map_system), config.n_steps, bins,
                                config.burn_in, config.progress_every)
    grid = density.counts.reshape(bins[0], -1)
    with open_output(config.output_path) as out:
        out.write(config_line(config))
        domain = ";".join(f"{fmt(lo)}:{fmt(hi)}" for lo, hi in density.bounds)
        out.write(f"# histogram dims={density.dims} bins={','.join(str(b) for b in bins)} "
                  f"domain={domain} total={density.total}\n")
        for line in grid:
            out.write(" ".join(str(int(c)) for c in line) + "\n")
    return EXIT_OK


def cmd_hyperbolicity(config: RunConfig) -> int:
    map_system = resolve_map(config)
    x0 = resolve_x0(config, map_system)
    mu = config.mu or resolve_m(config, map_system, x0)
    if config.trajectories > 1:
        tasks = [(map_system, map_system.random_point(config.seed, TRAJECTORY_STREAM_BASE + i), mu,
                  config.n_steps, config.burn_in, config.seed + i, config.window)
                 for i in range(config.trajectories)]
        parts = run_tasks(_angle_task, tasks, config.workers)
        series = parts[0]
        for part in parts[1:]:
            series = series.merge(part)
    else:
        series = stable_unstable_angles(map_system, x0, mu, config.n_steps, config.burn_in,
                                        config.seed, config.window,
                                        progress_every=config.progress_every)
    summary = series.summary()
    with open_output(config.output_path) as out:
        write_csv(out, config, ["bin_center", "pdf_value"], zip(series.centers(), series.histogram()), summary)
    if config.output_path != "-":
        with open(Path(config.output_path).with_suffix(".summary.json"), "w") as fh:
            write_json(fh, config, summary)
    return EXIT_OK


def cmd_appendix_1d(config: RunConfig) -> int:
    map_system = resolve_map(config)
    if map_system.dim != 1:
        raise ConfigValidationError(f"appendix-1d needs a 1-D map, got {map_system.name}")
    x0 = float(resolve_x0(config, map_system)[0])

    if config.sweep:
        points = binned_error_sweep(map_system, x0, config.sweep, config.reference_steps,
                                    config.probes, config.k_bins, config.burn_in, seed=config.seed)
        with open_output(config.output_path) as out:
            write_csv(out, config, ["n", "abs_error", "rel_error"],
                      ([p.n_samples, p.abs_error, p.rel_error] for p in points))
        return EXIT_OK

    series = binned_g_1d(map_system, x0, config.n_steps, config.k_bins, config.burn_in)
    idx, g = fd_log_gradient(series.counts, series.width)
    g_fd = np.full(series.bins, np.nan)
    g_fd[idx] = g
    summary: Dict[str, Any] = {"skipped": series.skipped}
    try:
        summary["fd_correlation"] = appendix_fd_1d(series).correlation
    except EmptyRow as e:
        logger.warning(f"No FD comparison: {e}")
    rows = zip(series.centers(), series.averages(), series.counts, g_fd)
    with open_output(config.output_path) as out:
        write_csv(out, config, ["bin_center", "g_avg", "count", "g_fd"], rows, summary)
    return EXIT_OK


COMMANDS = {
    "le": cmd_le,
    "density-gradient": cmd_density_gradient,
    "convergence": cmd_convergence,
    "mc-integrate": cmd_mc_integrate,
    "histogram": cmd_histogram,
    "hyperbolicity": cmd_hyperbolicity,
    "appendix-1d": cmd_appendix_1d,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Python config file (default: /etc/srb-gradient/config.py if present)")
    common.add_argument("--map", help="registered map name")
    common.add_argument("--params", type=_float_list, help="comma-separated map parameters")
    common.add_argument("--x0", type=_x0, help="'random' or comma-separated coordinates")
    common.add_argument("--m", type=_m, help="unstable dimension or 'auto'")
    common.add_argument("--n-steps", dest="n_steps", type=_count)
    common.add_argument("--burn-in", dest="burn_in", type=_count)
    common.add_argument("--seed", type=int)
    common.add_argument("--le-steps", dest="le_steps", type=_count, help="Benettin length for m=auto")
    common.add_argument("--gap-tol", dest="gap_tol", type=float)
    common.add_argument("--output", dest="output_path", help="output file, '-' for stdout")
    common.add_argument("--workers", type=int, help="worker processes (default: $SRB_GRAD_THREADS or 1)")
    common.add_argument("--log-dir", dest="log_dir")
    common.add_argument("--progress-every", dest="progress_every", type=_count)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="srb-gradient", description="SRB density gradient experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("le", parents=[common], help="Lyapunov spectrum (JSON)")
    p.add_argument("--count-m", dest="count_m", type=int, help="number of exponents (default: n)")

    p = sub.add_parser("density-gradient", parents=[common], help="stream g along a trajectory (CSV)")
    p.add_argument("--rows", type=_count_list, help="x2 rows for the finite-difference overlay")
    p.add_argument("--bins", type=_count_list)

    p = sub.add_parser("convergence", parents=[common], help="||g1 - g2|| for two tangent seeds (CSV)")
    p.add_argument("--seed2", type=int)

    p = sub.add_parser("mc-integrate", parents=[common], help="integration-by-parts pair (JSON)")
    p.add_argument("--observable")
    p.add_argument("--seeds", type=int, help="independent seeds merged into one estimate")
    p.add_argument("--sweep", type=_count_list, help="sample sizes, one JSON line each")

    p = sub.add_parser("histogram", parents=[common], help="visit histogram (text)")
    p.add_argument("--bins", type=_count_list)
    p.add_argument("--trajectories", type=int)

    p = sub.add_parser("hyperbolicity", parents=[common], help="stable/unstable angle PDF (CSV)")
    p.add_argument("--mu", type=int)
    p.add_argument("--window", type=int, help="look-ahead steps for the stable subspace")
    p.add_argument("--trajectories", type=int)

    p = sub.add_parser("appendix-1d", parents=[common], help="binned g for 1-D maps (CSV)")
    p.add_argument("--k-bins", dest="k_bins", type=_count)
    p.add_argument("--sweep", type=_count_list)
    p.add_argument("--reference-steps", dest="reference_steps", type=_count)
    p.add_argument("--probes", type=_float_list)
    return parser


NON_CONFIG_ARGS = ("config", "verbose", "quiet")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    overrides = {k: v for k, v in vars(args).items() if k not in NON_CONFIG_ARGS}

    try:
        config = load_config(args.config, overrides)
    except ConfigError as e:
        setup_logging(level)
        logger.error(f"Configuration error: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(level, config.log_dir)
    logger.info(f"srb-gradient {__version__}: {config.command} on {config.map}")
    try:
        return COMMANDS[config.command](config)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        logger.error(f"Invalid arguments: {e}")
        print(f"ValueError: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        where = "" if e.step is None else f" at step {e.step}"
        logger.error(f"Numerical failure{where}: {e.message}")
        print(f"{type(e).__name__}{where}: {e.message}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
