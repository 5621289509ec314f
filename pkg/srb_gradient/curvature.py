"""SRB density gradient along trajectories.

Second-order tangent propagation with R-rescaling (the general m-dimensional
scheme), the scalar recursion for straight unstable manifolds, and the binned
estimator for two-to-one interval maps.

Every propagator here is one-step: state at step k+1 is built only from
state at step k.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Tuple

import numpy as np

from srb_gradient.errors import (
    DerivativeSingularity,
    DimensionMismatch,
    NonFiniteState,
    NumericalError,
    ZeroDerivative,
)
from srb_gradient.kernels import binned_run, curvature_update
from srb_gradient.linalg import invert_upper_triangular
from srb_gradient.maps import MapSystem
from srb_gradient.rng import TANGENT_STREAM
from srb_gradient.tangent import DEFAULT_BURN_IN, TangentFrame, init_frame, step_frame

logger = logging.getLogger(__name__)

Bilinear = Callable[[np.ndarray, np.ndarray], np.ndarray]

# unrecorded steps after a reset to g0 while the recursion forgets it
RESET_SETTLE_STEPS = 40


def _packed_indices(m: int) -> Tuple[np.ndarray, np.ndarray]:
    # row-major lower triangle: (0,0), (1,0), (1,1), (2,0), ...
    return np.tril_indices(m)


@dataclass(frozen=True)
class CurvatureState:
    """Symmetric family a^(i,j), stored once per unordered pair as an n-vector"""
    packed: np.ndarray
    m: int
    step: int = 0

    @classmethod
    def zeros(cls, n: int, m: int) -> "CurvatureState":
        return cls(packed=np.zeros((m * (m + 1) // 2, n)), m=m, step=0)

    @classmethod
    def from_full(cls, full: np.ndarray, step: int = 0) -> "CurvatureState":
        """Pack the lower triangle of an (m, m, n) array"""
        m = full.shape[0]
        rows, cols = _packed_indices(m)
        return cls(packed=np.ascontiguousarray(full[rows, cols, :]), m=m, step=step)

    @property
    def n(self) -> int:
        return self.packed.shape[1]

    def pair(self, i: int, j: int) -> np.ndarray:
        if i < j:
            i, j = j, i
        return self.packed[i * (i + 1) // 2 + j]

    def full(self) -> np.ndarray:
        """(m, m, n) array with both (i, j) and (j, i) filled from shared storage"""
        m = self.m
        rows, cols = _packed_indices(m)
        out = np.empty((m, m, self.n))
        out[rows, cols, :] = self.packed
        out[cols, rows, :] = self.packed
        return out


@dataclass(frozen=True)
class GradientSample:
    step: int
    point: np.ndarray
    g: np.ndarray


@dataclass
class GradientSeries1D:
    """Per-bin sums of a scalar gradient sequence over [0, 1]"""
    bins: int
    sums: np.ndarray
    counts: np.ndarray
    domain: Tuple[float, float] = (0.0, 1.0)
    skipped: int = 0

    @classmethod
    def empty(cls, bins: int) -> "GradientSeries1D":
        return cls(bins=bins, sums=np.zeros(bins), counts=np.zeros(bins, dtype=np.int64))

    @property
    def width(self) -> float:
        return (self.domain[1] - self.domain[0]) / self.bins

    def centers(self) -> np.ndarray:
        return self.domain[0] + (np.arange(self.bins) + 0.5) * self.width

    def bin_of(self, x: float) -> int:
        # half-open bins; the last one also takes the right end point
        k = int((x - self.domain[0]) / self.width)
        return min(max(k, 0), self.bins - 1)

    def averages(self) -> np.ndarray:
        """Bin averages; NaN where a bin was never visited"""
        out = np.full(self.bins, np.nan)
        hit = self.counts > 0
        out[hit] = self.sums[hit] / self.counts[hit]
        return out

    def merge(self, other: "GradientSeries1D") -> "GradientSeries1D":
        if other.bins != self.bins:
            raise DimensionMismatch(f"cannot merge {self.bins} bins with {other.bins}")
        return GradientSeries1D(bins=self.bins, sums=self.sums + other.sums,
                                counts=self.counts + other.counts, domain=self.domain,
                                skipped=self.skipped + other.skipped)


def step_curvature_raw(a_k: CurvatureState, q_k: np.ndarray, jac: np.ndarray,
                       hess: Bilinear) -> CurvatureState:
    """Unscaled second-order tangent step: hess(Q_i, Q_j) + jac a_ij for j <= i"""
    n, m = q_k.shape
    if a_k.m != m or a_k.n != n or jac.shape != (n, n):
        raise DimensionMismatch(
            f"shapes disagree: a {a_k.packed.shape} (m={a_k.m}), q {q_k.shape}, jac {jac.shape}"
        )
    out = a_k.packed @ jac.T
    rows, cols = _packed_indices(m)
    for idx, (i, j) in enumerate(zip(rows, cols)):
        out[idx] += hess(q_k[:, i], q_k[:, j])
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("second-order tangent state is not finite")
    return CurvatureState(packed=out, m=m, step=a_k.step + 1)


def rescale_curvature(a_raw: CurvatureState, r_inv: np.ndarray) -> CurvatureState:
    """a^(i,j) = sum_pq a~^(p,q) Rinv^(p,i) Rinv^(q,j)"""
    full = np.einsum("pqk,pi,qj->ijk", a_raw.full(), r_inv, r_inv)
    return CurvatureState.from_full(full, step=a_raw.step)


def eval_g(q_next: np.ndarray, a_next: CurvatureState) -> np.ndarray:
    """g^(i) = - sum_j Q^(:,j) . a^(i,j)"""
    if q_next.shape != (a_next.n, a_next.m):
        raise DimensionMismatch(f"q {q_next.shape} does not match curvature ({a_next.n}, {a_next.m})")
    return -np.einsum("kj,ijk->i", q_next, a_next.full())


class CurvaturePropagator:
    """Tangent frame plus curvature family advanced together, one step at a time"""

    def __init__(self, frame: TangentFrame, state: CurvatureState):
        self.frame = frame
        self.state = state

    @classmethod
    def start(cls, n: int, m: int, seed: int, stream_id: int = TANGENT_STREAM) -> "CurvaturePropagator":
        # a_0 = 0 keeps linear maps at g = 0 from the first step
        return cls(init_frame(n, m, seed, stream_id), CurvatureState.zeros(n, m))

    def advance(self, jac: np.ndarray, hess: Bilinear) -> np.ndarray:
        """Move from x_k to x_{k+1} given derivatives at x_k; returns g_{k+1}.

        Same result as step_curvature_raw, rescale_curvature and eval_g in
        turn, fused into one compiled kernel.
        """
        frame_next = step_frame(self.frame, jac)
        r_inv = invert_upper_triangular(frame_next.r_last)
        q_k = self.frame.q
        rows, cols = _packed_indices(self.state.m)
        hess_packed = np.array([hess(q_k[:, i], q_k[:, j]) for i, j in zip(rows, cols)], dtype=np.float64)
        packed, g = curvature_update(self.state.packed, np.ascontiguousarray(jac, dtype=np.float64),
                                     hess_packed, r_inv, frame_next.q)
        if not (np.all(np.isfinite(packed)) and np.all(np.isfinite(g))):
            raise NonFiniteState("second-order tangent state is not finite")
        self.state = CurvatureState(packed=packed, m=self.state.m, step=self.state.step + 1)
        self.frame = frame_next
        return g


def _derivatives(map_system: MapSystem, x: np.ndarray) -> Tuple[np.ndarray, Bilinear]:
    xe = map_system.nudge(x)
    return map_system.jacobian(xe), lambda u, v: map_system.hessian_bilinear(xe, u, v)


def algorithm1_states(map_system: MapSystem, x0: np.ndarray, m: int, n_steps: int,
                      burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                      stream_id: int = TANGENT_STREAM,
                      progress_every: int = 1_000_000) -> Iterator[Tuple[GradientSample, TangentFrame]]:
    """Run the gradient scheme, yielding each post-burn-in sample with its frame"""
    if not 1 <= m <= map_system.dim:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={map_system.dim}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    prop = CurvaturePropagator.start(map_system.dim, m, seed, stream_id)
    x = np.asarray(x0, dtype=np.float64)
    total = burn_in + n_steps
    for k in range(total):
        try:
            jac, hess = _derivatives(map_system, x)
            g = prop.advance(jac, hess)
        except NumericalError as e:
            raise e.with_step(k)
        x = map_system.apply(x)
        if k >= burn_in:
            yield GradientSample(step=k + 1, point=x, g=g), prop.frame
        if progress_every and (k + 1) % progress_every == 0:
            logger.info(f"Gradient step {k + 1}/{total}")


def run_algorithm1(map_system: MapSystem, x0: np.ndarray, m: int, n_steps: int,
                   burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                   stream_id: int = TANGENT_STREAM) -> Iterator[GradientSample]:
    """Stream of GradientSample for the n_steps iterations after burn_in"""
    for sample, _ in algorithm1_states(map_system, x0, m, n_steps, burn_in, seed, stream_id):
        yield sample


def step_g_1d_straight(g_k: float, d1: float, d2: float) -> float:
    """g_{k+1} = g_k / d1 - d2 / d1^2"""
    if abs(d1) < 1e-300:
        raise ZeroDerivative(f"first derivative vanished: d1 = {d1!r}")
    return g_k / d1 - d2 / (d1 * d1)


def straight_manifold_g(map_system: MapSystem, x0: np.ndarray, n_steps: int,
                        burn_in: int = DEFAULT_BURN_IN, g0: float = 0.0) -> Iterator[GradientSample]:
    """Scalar recursion for maps whose unstable manifolds are aligned with x^(1)"""
    e1 = np.zeros(map_system.dim)
    e1[0] = 1.0
    x = np.asarray(x0, dtype=np.float64)
    g = float(g0)
    for k in range(burn_in + n_steps):
        try:
            xe = map_system.nudge(x)
            d1 = map_system.jacobian(xe)[0, 0]
            d2 = map_system.hessian_bilinear(xe, e1, e1)[0]
            g = step_g_1d_straight(g, d1, d2)
        except NumericalError as e:
            raise e.with_step(k)
        x = map_system.apply(x)
        if k >= burn_in:
            yield GradientSample(step=k + 1, point=x, g=np.array([g]))


class BinnedGradient1D:
    """Joint iteration of a 1-D map and its scalar gradient recursion, binned on [0, 1].

    ``run`` can be called repeatedly; the trajectory and the recursion carry
    over, so nested sample sizes come from one orbit. A singular step resets
    the recursion to g0, and that sample plus the next ``settle_steps`` are
    left out of the bins and counted as skipped.
    """

    def __init__(self, map1d: MapSystem, x0: float, k_bins: int, g0: float = 0.0,
                 settle_steps: int = RESET_SETTLE_STEPS):
        if map1d.dim != 1:
            raise DimensionMismatch(f"binned estimator needs a 1-D map, got dim {map1d.dim}")
        if k_bins < 2:
            raise ValueError(f"need at least 2 bins, got {k_bins}")
        self.map1d = map1d
        self.x = np.array([float(x0)])
        self.g0 = float(g0)
        self.g = self.g0
        self.settle_steps = int(settle_steps)
        self.settle = 0
        self.series = GradientSeries1D.empty(k_bins)
        self.steps = 0

    def run(self, n_steps: int, record: bool = True) -> GradientSeries1D:
        out = self.series
        kernel = self.map1d.step_kernel
        if kernel is None:
            skipped = self._run_python(n_steps, record)
        else:
            x, self.g, self.settle, skipped = binned_run(
                kernel, self.map1d.params[0], float(self.x[0]), self.g, self.g0, self.settle,
                self.settle_steps, n_steps, record, out.sums, out.counts, out.domain[0], out.width)
            self.x = np.array([x])
            self.steps += n_steps
        out.skipped += skipped
        if not np.all(np.isfinite(out.sums)):
            raise NonFiniteState(f"binned gradient sums are not finite after step {self.steps}")
        return out

    def _run_python(self, n_steps: int, record: bool) -> int:
        one = np.ones(1)
        out = self.series
        skipped = 0
        for _ in range(n_steps):
            try:
                d1 = self.map1d.jacobian(self.x)[0, 0]
                d2 = self.map1d.hessian_bilinear(self.x, one, one)[0]
                g_next = step_g_1d_straight(self.g, d1, d2)
            except (DerivativeSingularity, ZeroDerivative) as e:
                logger.debug(f"Skipping singular sample at step {self.steps}: {e}")
                if record:
                    skipped += 1
                self.g = self.g0
                self.settle = self.settle_steps
            else:
                if record:
                    if self.settle > 0:
                        skipped += 1
                    else:
                        b = out.bin_of(self.x[0])
                        out.sums[b] += self.g
                        out.counts[b] += 1
                self.settle = max(self.settle - 1, 0)
                self.g = g_next
            self.x = self.map1d.apply(self.x)
            self.steps += 1
        return skipped


def binned_g_1d(map1d: MapSystem, x0: float, n_steps: int, k_bins: int,
                burn_in: int = DEFAULT_BURN_IN, g0: float = 0.0) -> GradientSeries1D:
    """Average the scalar recursion per bin of [0, 1]; converges to rho'/rho of the 1-D map.

    Samples at points where the map derivative is singular are skipped and
    counted; the recursion restarts from g = g0 and its first
    RESET_SETTLE_STEPS samples after the restart are skipped too.
    """
    estimator = BinnedGradient1D(map1d, x0, k_bins, g0)
    estimator.run(burn_in, record=False)
    series = estimator.run(n_steps)
    if series.skipped:
        logger.info(f"Skipped {series.skipped} samples at or just after singular points")
    return series


def align_columns(q_ref: np.ndarray, q: np.ndarray) -> np.ndarray:
    """+-1 per column so that q's columns point the same way as q_ref's"""
    signs = np.sign(np.einsum("ij,ij->j", q_ref, q))
    signs[signs == 0] = 1.0
    return signs


def convergence_diagnostic(map_system: MapSystem, x0: np.ndarray, m: int, n_steps: int,
                           seed1: int, seed2: int) -> Iterator[Tuple[int, float]]:
    """||g_k,1 - g_k,2|| for two tangent initialisations sharing one primal trajectory.

    g^(i) is signed relative to the basis column Q^(:i), so the second run's
    components are flipped wherever its columns point against the first run's.
    """
    n = map_system.dim
    first = CurvaturePropagator.start(n, m, seed1, TANGENT_STREAM)
    second = CurvaturePropagator.start(n, m, seed2, TANGENT_STREAM)
    x = np.asarray(x0, dtype=np.float64)
    for k in range(n_steps):
        try:
            jac, hess = _derivatives(map_system, x)
            g1 = first.advance(jac, hess)
            g2 = second.advance(jac, hess)
        except NumericalError as e:
            raise e.with_step(k)
        x = map_system.apply(x)
        signs = align_columns(first.frame.q, second.frame.q)
        yield k + 1, float(np.linalg.norm(g1 - signs * g2))
