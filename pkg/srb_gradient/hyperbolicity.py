"""Angle between stable and unstable subspaces along an orbit.

The unstable subspace E^u(x_k) is the span of the first mu columns of a full
forward QR frame. The stable subspace is the orthogonal complement of the
leading mu forward Lyapunov vectors, which are obtained by sweeping Dphi^T
backward over a look-ahead window of stored Jacobians. Jacobians are kept in
blocks so each block costs one backward sweep.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy.linalg import null_space

from srb_gradient.errors import DimensionMismatch, NumericalError, SingularJacobian
from srb_gradient.linalg import principal_angle_measure, qr_householder
from srb_gradient.maps import MapSystem
from srb_gradient.rng import ADJOINT_STREAM, stream_generator
from srb_gradient.tangent import DEFAULT_BURN_IN, LESpectrum, init_frame, step_frame

logger = logging.getLogger(__name__)

PDF_BINS = 100
DEFAULT_WINDOW = 60
DEFAULT_BLOCK = 1024
SINGULAR_DET = 1e-300


@dataclass
class AngleSeries:
    samples: np.ndarray
    le_spectrum: LESpectrum

    def histogram(self) -> np.ndarray:
        """100-bin PDF over [0, 1]"""
        pdf, _ = np.histogram(self.samples, bins=PDF_BINS, range=(0.0, 1.0), density=True)
        return pdf

    @staticmethod
    def centers() -> np.ndarray:
        return (np.arange(PDF_BINS) + 0.5) / PDF_BINS

    @property
    def min_d(self) -> float:
        return float(self.samples.min())

    def frac_below(self, threshold: float) -> float:
        return float(np.mean(self.samples < threshold))

    def merge(self, other: "AngleSeries") -> "AngleSeries":
        # exponents are pooled over every averaged step, so orbits weigh by length
        mine, theirs = self.le_spectrum, other.le_spectrum
        length = mine.trajectory_length + theirs.trajectory_length
        exps = tuple((a * mine.trajectory_length + b * theirs.trajectory_length) / length
                     for a, b in zip(mine.exponents, theirs.exponents))
        spectrum = LESpectrum(exps, length, mine.burn_in)
        return AngleSeries(np.concatenate([self.samples, other.samples]), spectrum)

    def summary(self) -> Dict[str, object]:
        return {
            "min_d": self.min_d,
            "frac_below_0.9": self.frac_below(0.9),
            "n_samples": int(self.samples.size),
            "le_spectrum": list(self.le_spectrum.exponents),
        }


def _check_jacobian(jac: np.ndarray) -> None:
    det = abs(np.linalg.det(jac))
    if not det >= SINGULAR_DET:
        raise SingularJacobian(f"|det Dphi| = {det:.3e} below {SINGULAR_DET}")


def _backward_sweep(pending: List[Tuple[np.ndarray, np.ndarray]], count: int, mu: int,
                    rng: np.random.Generator) -> np.ndarray:
    """d for the first ``count`` stored points; later entries serve as look-ahead"""
    n = pending[0][1].shape[0]
    f = qr_householder(rng.standard_normal((n, mu))).q
    out = np.empty(count)
    for idx in range(len(pending) - 1, -1, -1):
        qu, jac = pending[idx]
        f = qr_householder(jac.T @ f).q
        if idx < count:
            out[idx] = principal_angle_measure(qu, null_space(f.T))
    return out


def stable_unstable_angles(map_system: MapSystem, x0: np.ndarray, mu: int, n_steps: int,
                           burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                           window: int = DEFAULT_WINDOW, block: int = DEFAULT_BLOCK,
                           progress_every: int = 1_000_000) -> AngleSeries:
    """Per-step angle measure d(x_k) for burn_in <= k < burn_in + n_steps, plus all n exponents"""
    n = map_system.dim
    if not 1 <= mu < n:
        raise DimensionMismatch(f"need 1 <= mu < n for a stable/unstable split, got mu={mu}, n={n}")
    if n_steps < 1 or window < 1 or block < 1:
        raise ValueError(f"n_steps, window and block must be positive: {n_steps}, {window}, {block}")

    frame = init_frame(n, n, seed)
    adjoint_rng = stream_generator(seed, ADJOINT_STREAM)
    x = np.asarray(x0, dtype=np.float64)
    log_sums = np.zeros(n)
    pending: List[Tuple[np.ndarray, np.ndarray]] = []
    chunks: List[np.ndarray] = []
    total = burn_in + n_steps + window

    for k in range(total):
        try:
            jac = map_system.jacobian(map_system.nudge(x))
            _check_jacobian(jac)
            if k >= burn_in:
                pending.append((frame.q[:, :mu].copy(), jac))
            frame = step_frame(frame, jac)
        except NumericalError as e:
            raise e.with_step(k)
        if burn_in <= k < burn_in + n_steps:
            log_sums += np.log(np.diag(frame.r_last))
        x = map_system.apply(x)

        if len(pending) >= block + window:
            try:
                chunks.append(_backward_sweep(pending, block, mu, adjoint_rng))
            except NumericalError as e:
                raise e.with_step(k)
            del pending[:block]
        if progress_every and (k + 1) % progress_every == 0:
            logger.info(f"Hyperbolicity step {k + 1}/{total}")

    remaining = len(pending) - window
    if remaining > 0:
        try:
            chunks.append(_backward_sweep(pending, remaining, mu, adjoint_rng))
        except NumericalError as e:
            raise e.with_step(total)

    exponents = tuple(float(v) for v in sorted(log_sums / n_steps, reverse=True))
    samples = np.concatenate(chunks)
    logger.info(f"Angle probe on {map_system.name}: min d = {samples.min():.4f}, exponents {exponents}")
    return AngleSeries(samples=samples, le_spectrum=LESpectrum(exponents, n_steps, burn_in))
