"""Empirical SRB estimation and the validation oracles for g.

Histograms of trajectory visits, finite-difference gradients of their
conditional densities, single-pass ergodic averages, and the Monte Carlo
integration-by-parts pair.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from srb_gradient.curvature import (
    BinnedGradient1D,
    GradientSample,
    GradientSeries1D,
    algorithm1_states,
    binned_g_1d,
)
from srb_gradient.ensemble import run_tasks
from srb_gradient.errors import DimensionMismatch, EmptyRow, NonFiniteState, NumericalError
from srb_gradient.maps import MapSystem
from srb_gradient.observables import Observable
from srb_gradient.rng import TRAJECTORY_STREAM_BASE
from srb_gradient.tangent import DEFAULT_BURN_IN, TangentFrame, init_frame, step_frame

logger = logging.getLogger(__name__)

HISTOGRAM_CHUNK = 1 << 16

Integrand = Callable[[np.ndarray, TangentFrame, GradientSample], float]


@dataclass
class EmpiricalDensity:
    """Visit counts on an equal-width grid, indexed counts[i_x1, i_x2, ...]"""
    counts: np.ndarray
    bounds: Tuple[Tuple[float, float], ...]

    @classmethod
    def empty(cls, bins: Sequence[int], bounds: Sequence[Tuple[float, float]]) -> "EmpiricalDensity":
        bins = tuple(int(b) for b in bins)
        if len(bins) != len(bounds):
            raise DimensionMismatch(f"{len(bins)} bin counts for a {len(bounds)}-D domain")
        if min(bins) < 2:
            raise ValueError(f"need at least 2 bins per dimension, got {bins}")
        return cls(counts=np.zeros(bins, dtype=np.int64),
                   bounds=tuple((float(lo), float(hi)) for lo, hi in bounds))

    @property
    def dims(self) -> int:
        return self.counts.ndim

    @property
    def bins_per_dim(self) -> Tuple[int, ...]:
        return self.counts.shape

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.array([(hi - lo) / b for (lo, hi), b in zip(self.bounds, self.counts.shape)])

    @property
    def bin_volume(self) -> float:
        return float(np.prod(self.widths))

    def edges(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, b + 1) for (lo, hi), b in zip(self.bounds, self.counts.shape)]

    def centers(self, axis: int) -> np.ndarray:
        lo, _ = self.bounds[axis]
        return lo + (np.arange(self.counts.shape[axis]) + 0.5) * self.widths[axis]

    def add_points(self, points: np.ndarray) -> None:
        if not np.all(np.isfinite(points)):
            raise NonFiniteState("trajectory left the finite range while histogramming")
        hist, _ = np.histogramdd(points, bins=self.edges())
        self.counts += hist.astype(np.int64)

    def density(self) -> np.ndarray:
        """counts / (total * bin volume); integrates to 1 over the domain"""
        total = self.total
        if total == 0:
            raise EmptyRow("histogram has no samples")
        return self.counts / (total * self.bin_volume)

    def marginal(self, axis: int) -> np.ndarray:
        """Density of coordinate ``axis`` with every other coordinate integrated out"""
        others = tuple(i for i in range(self.dims) if i != axis)
        summed = self.counts.sum(axis=others) if others else self.counts
        total = self.total
        if total == 0:
            raise EmptyRow("histogram has no samples")
        return summed / (total * self.widths[axis])

    def conditional_row(self, row: int) -> np.ndarray:
        """Normalised density along x1 at fixed x2 bin ``row``"""
        if self.dims != 2:
            raise DimensionMismatch(f"conditional rows need a 2-D histogram, got {self.dims}-D")
        counts = self.counts[:, row]
        mass = counts.sum()
        if mass == 0:
            raise EmptyRow(f"row {row} has no samples")
        return counts / (mass * self.widths[0])

    def merge(self, other: "EmpiricalDensity") -> "EmpiricalDensity":
        if other.counts.shape != self.counts.shape or other.bounds != self.bounds:
            raise DimensionMismatch("histograms have different grids")
        return EmpiricalDensity(counts=self.counts + other.counts, bounds=self.bounds)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    n_samples: int
    running_variance: float
    std_error: float

    def to_dict(self):
        return {"value": self.value, "std_error": self.std_error,
                "n": self.n_samples, "variance": self.running_variance}

    def scaled(self, factor: float) -> "MCEstimate":
        return MCEstimate(self.value * factor, self.n_samples,
                          self.running_variance * factor * factor, self.std_error * abs(factor))


@dataclass
class RunningStats:
    """Welford mean/variance; ``merge`` is the pairwise parallel combination"""
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, value: float) -> None:
        if not math.isfinite(value):
            raise NonFiniteState(f"integrand returned {value!r}")
        self.n += 1
        delta = value - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return RunningStats(self.n, self.mean, self.m2)
        if self.n == 0:
            return RunningStats(other.n, other.mean, other.m2)
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    def estimate(self) -> MCEstimate:
        var = self.variance
        se = math.sqrt(var / self.n) if self.n else 0.0
        return MCEstimate(value=self.mean, n_samples=self.n, running_variance=var, std_error=se)


class FDSeries(NamedTuple):
    indices: np.ndarray
    centers: np.ndarray
    g: np.ndarray


@dataclass
class IntegrationPair:
    """Both sides of  int grad(v).Q dmu = - int g.v dmu  over one trajectory.

    Sides are reported as volume times the trajectory mean, the Monte Carlo
    estimate of an integral over the whole domain box.
    """
    lhs_stats: RunningStats = field(default_factory=RunningStats)
    rhs_stats: RunningStats = field(default_factory=RunningStats)
    g_sq_stats: RunningStats = field(default_factory=RunningStats)
    volume: float = 1.0

    @property
    def lhs(self) -> MCEstimate:
        return self.lhs_stats.estimate().scaled(self.volume)

    @property
    def rhs(self) -> MCEstimate:
        return self.rhs_stats.estimate().scaled(self.volume)

    @property
    def g_l2_norm(self) -> float:
        return math.sqrt(max(self.g_sq_stats.mean, 0.0))

    def merge(self, other: "IntegrationPair") -> "IntegrationPair":
        if not math.isclose(self.volume, other.volume):
            raise ValueError(f"cannot merge pairs over domains of volume {self.volume} and {other.volume}")
        return IntegrationPair(self.lhs_stats.merge(other.lhs_stats),
                               self.rhs_stats.merge(other.rhs_stats),
                               self.g_sq_stats.merge(other.g_sq_stats),
                               self.volume)

    def to_dict(self):
        return {"lhs": self.lhs.to_dict(), "rhs": self.rhs.to_dict(), "g_l2_norm": self.g_l2_norm}


@dataclass
class GradientProfile:
    """Visit histogram plus per-bin sums of g^(1) from one co-running pass"""
    density: EmpiricalDensity
    g_sums: np.ndarray

    def row_average(self, row: int) -> np.ndarray:
        counts = self.density.counts[:, row]
        out = np.full(counts.shape, np.nan)
        hit = counts > 0
        out[hit] = self.g_sums[hit, row] / counts[hit]
        return out

    def merge(self, other: "GradientProfile") -> "GradientProfile":
        return GradientProfile(self.density.merge(other.density), self.g_sums + other.g_sums)


class SweepPoint(NamedTuple):
    n_samples: int
    abs_error: float
    rel_error: float


class FDComparison(NamedTuple):
    centers: np.ndarray
    g_binned: np.ndarray
    g_fd: np.ndarray
    correlation: float


def _start_point(map_system: MapSystem, x0: Optional[np.ndarray], seed: int) -> np.ndarray:
    return map_system.random_point(seed) if x0 is None else np.asarray(x0, dtype=np.float64)


def _orientation(q: np.ndarray) -> np.ndarray:
    # fixes each unstable column's sign once per trajectory
    d = np.sign(np.diag(q[: q.shape[1], :]))
    d[d == 0] = 1.0
    return d


def histogram_srb(map_system: MapSystem, x0: np.ndarray, n_steps: int, bins: Sequence[int],
                  burn_in: int = DEFAULT_BURN_IN, progress_every: int = 1_000_000) -> EmpiricalDensity:
    """Visit counts of x_k for burn_in <= k < burn_in + n_steps"""
    density = EmpiricalDensity.empty(bins, map_system.domain)
    x = np.asarray(x0, dtype=np.float64)
    for _ in range(burn_in):
        x = map_system.apply(x)
    buf = np.empty((min(HISTOGRAM_CHUNK, max(n_steps, 1)), map_system.dim))
    fill = 0
    for k in range(n_steps):
        buf[fill] = x
        fill += 1
        if fill == len(buf):
            density.add_points(buf)
            fill = 0
        x = map_system.apply(x)
        if progress_every and (k + 1) % progress_every == 0:
            logger.info(f"Histogram step {k + 1}/{n_steps}")
    if fill:
        density.add_points(buf[:fill])
    return density


def histogram_srb_ensemble(map_system: MapSystem, n_steps: int, bins: Sequence[int],
                           burn_in: int = DEFAULT_BURN_IN, trajectories: int = 1,
                           seed: int = 0, workers: Optional[int] = None) -> EmpiricalDensity:
    """Merged histogram of independent trajectories started from per-trajectory streams"""
    tasks = [(map_system, map_system.random_point(seed, TRAJECTORY_STREAM_BASE + i),
              n_steps, tuple(bins), burn_in)
             for i in range(trajectories)]
    parts = run_tasks(histogram_srb, tasks, workers)
    out = parts[0]
    for part in parts[1:]:
        out = out.merge(part)
    return out


def fd_log_gradient(counts: np.ndarray, width: float) -> Tuple[np.ndarray, np.ndarray]:
    """Central difference of log density on interior bins whose stencil has no empty bin"""
    c = np.asarray(counts, dtype=np.float64)
    if c.ndim != 1 or c.size < 3:
        raise DimensionMismatch(f"need a 1-D profile of at least 3 bins, got shape {c.shape}")
    ok = (c[:-2] > 0) & (c[1:-1] > 0) & (c[2:] > 0)
    idx = np.nonzero(ok)[0] + 1
    g = (c[idx + 1] - c[idx - 1]) / (2.0 * width * c[idx])
    return idx, g


def conditional_fd_g(density: EmpiricalDensity, row_index: int) -> FDSeries:
    """Finite-difference g along x1 for one x2 row of a 2-D histogram"""
    if density.dims != 2:
        raise DimensionMismatch(f"conditional rows need a 2-D histogram, got {density.dims}-D")
    if not 0 <= row_index < density.counts.shape[1]:
        raise ValueError(f"row {row_index} outside 0..{density.counts.shape[1] - 1}")
    counts = density.counts[:, row_index]
    if not counts.any():
        raise EmptyRow(f"row {row_index} has no samples")
    idx, g = fd_log_gradient(counts, density.widths[0])
    return FDSeries(indices=idx, centers=density.centers(0)[idx], g=g)


def ergodic_average(map_system: MapSystem, f: Integrand, n_steps: int,
                    burn_in: int = DEFAULT_BURN_IN, seed: int = 0, m: Optional[int] = None,
                    x0: Optional[np.ndarray] = None) -> MCEstimate:
    """Time average of f(point, frame, sample) with the gradient scheme co-running"""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    m = m or map_system.unstable_dim_hint or 1
    stats = RunningStats()
    for sample, frame in algorithm1_states(map_system, _start_point(map_system, x0, seed),
                                           m, n_steps, burn_in, seed):
        try:
            stats.push(float(f(sample.point, frame, sample)))
        except NumericalError as e:
            raise e.with_step(sample.step)
    return stats.estimate()


def mc_integrate_pair(map_system: MapSystem, v: Observable, m: int, n_steps: int,
                      burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                      x0: Optional[np.ndarray] = None) -> IntegrationPair:
    """Integrals of sum_j grad(v).Q_j and -sum_j g_j v estimated on one trajectory.

    Column signs of Q are fixed from the first recorded frame so that runs
    with different tangent seeds estimate the same integrals.
    """
    if v.dim is not None and v.dim != map_system.dim:
        raise DimensionMismatch(f"observable '{v.name}' is {v.dim}-D, map is {map_system.dim}-D")
    pair = IntegrationPair(volume=map_system.volume)
    orient = None
    for sample, frame in algorithm1_states(map_system, _start_point(map_system, x0, seed),
                                           m, n_steps, burn_in, seed):
        if orient is None:
            orient = _orientation(frame.q)
        x = sample.point
        try:
            pair.lhs_stats.push(float(np.sum(orient * (v.gradient(x) @ frame.q))))
            pair.rhs_stats.push(-float(np.sum(orient * sample.g)) * v.eval(x))
            pair.g_sq_stats.push(float(sample.g @ sample.g))
        except NumericalError as e:
            raise e.with_step(sample.step)
    return pair


def q_angle_stat(map_system: MapSystem, n_steps: int, x0: Optional[np.ndarray] = None,
                 burn_in: int = DEFAULT_BURN_IN, seed: int = 0) -> float:
    """Largest inclination arctan|q2/q1| of the 1-D unstable direction after burn-in"""
    if map_system.dim != 2:
        raise DimensionMismatch(f"inclination is defined for 2-D maps, got {map_system.dim}-D")
    frame = init_frame(2, 1, seed)
    x = _start_point(map_system, x0, seed)
    worst = 0.0
    for k in range(burn_in + n_steps):
        try:
            frame = step_frame(frame, map_system.jacobian(map_system.nudge(x)))
        except NumericalError as e:
            raise e.with_step(k)
        x = map_system.apply(x)
        if k >= burn_in:
            worst = max(worst, math.atan2(abs(frame.q[1, 0]), abs(frame.q[0, 0])))
    return worst


def gradient_profile(map_system: MapSystem, x0: np.ndarray, m: int, n_steps: int,
                     bins: Sequence[int], burn_in: int = DEFAULT_BURN_IN,
                     seed: int = 0) -> GradientProfile:
    """Histogram of the gradient trajectory with per-bin sums of the oriented g^(1)"""
    density = EmpiricalDensity.empty(bins, map_system.domain)
    g_sums = np.zeros(density.counts.shape)
    lower = np.array([lo for lo, _ in density.bounds])
    widths = density.widths
    top = np.array(density.counts.shape) - 1
    orient = None
    for sample, frame in algorithm1_states(map_system, x0, m, n_steps, burn_in, seed):
        if orient is None:
            orient = _orientation(frame.q)
        idx = tuple(np.minimum(((sample.point - lower) / widths).astype(int), top))
        density.counts[idx] += 1
        g_sums[idx] += orient[0] * sample.g[0]
    return GradientProfile(density=density, g_sums=g_sums)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 3:
        raise EmptyRow(f"need at least 3 comparable bins, got {a.size}")
    return float(np.corrcoef(a, b)[0, 1])


def profile_correlation(profile: GradientProfile, row: int, min_count: int = 1) -> float:
    """Pearson correlation of bin-averaged g^(1) against the FD gradient of the same row"""
    fd = conditional_fd_g(profile.density, row)
    avg = profile.row_average(row)[fd.indices]
    keep = (profile.density.counts[fd.indices, row] >= min_count) & np.isfinite(avg)
    return _pearson(avg[keep], fd.g[keep])


def invariance_fraction(h1: EmpiricalDensity, h2: EmpiricalDensity, n_sigma: float = 5.0) -> float:
    """Fraction of occupied bins where two histograms agree within n_sigma Poisson deviations"""
    if h1.counts.shape != h2.counts.shape:
        raise DimensionMismatch("histograms have different grids")
    scale = h1.total / h2.total
    c1 = h1.counts.astype(np.float64)
    c2 = h2.counts.astype(np.float64) * scale
    occupied = (c1 + c2) > 0
    sigma = np.sqrt(c1 + c2 * scale)
    agree = np.abs(c1 - c2) <= n_sigma * sigma
    return float(agree[occupied].mean())


def appendix_fd_1d(series: GradientSeries1D, min_count: int = 50) -> FDComparison:
    """Binned recursion averages against the FD gradient of the same run's visit counts"""
    idx, g_fd = fd_log_gradient(series.counts, series.width)
    keep = series.counts[idx] >= min_count
    idx, g_fd = idx[keep], g_fd[keep]
    g_binned = series.averages()[idx]
    return FDComparison(centers=series.centers()[idx], g_binned=g_binned, g_fd=g_fd,
                        correlation=_pearson(g_binned, g_fd))


def binned_error_sweep(map1d: MapSystem, x0: float, sizes: Iterable[int], reference_size: int,
                       probe_points: Sequence[float] = (0.4, 0.6), k_bins: int = 2048,
                       burn_in: int = DEFAULT_BURN_IN, reference_x0: Optional[float] = None,
                       seed: int = 0) -> List[SweepPoint]:
    """Error of the binned g at fixed probe bins for nested sample sizes.

    The reference comes from a separate orbit (``reference_x0``, else a
    seed-derived start) of ``reference_size`` samples.
    """
    if reference_x0 is None:
        reference_x0 = float(map1d.random_point(seed, TRAJECTORY_STREAM_BASE)[0])
    reference = binned_g_1d(map1d, reference_x0, reference_size, k_bins, burn_in).averages()
    estimator = BinnedGradient1D(map1d, x0, k_bins)
    estimator.run(burn_in, record=False)
    probes = [estimator.series.bin_of(p) for p in probe_points]
    ref = reference[probes]

    out = []
    done = 0
    for n in sorted(int(s) for s in sizes):
        estimator.run(n - done)
        done = n
        err = np.abs(estimator.series.averages()[probes] - ref)
        abs_error = float(np.mean(err))
        denom = float(np.mean(np.abs(ref)))
        rel_error = abs_error / denom if denom > 0 else math.nan
        logger.info(f"Binned error at N={n}: {abs_error:.3e} (relative {rel_error:.3e})")
        out.append(SweepPoint(n_samples=n, abs_error=abs_error, rel_error=rel_error))
    return out
