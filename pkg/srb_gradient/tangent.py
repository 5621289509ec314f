"""First-order tangent propagation with QR renormalization and Benettin exponents"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from srb_gradient.errors import AmbiguousSpectrum, DegenerateBasis, NonFiniteState, NumericalError
from srb_gradient.linalg import qr_householder
from srb_gradient.maps import MapSystem
from srb_gradient.rng import TANGENT_STREAM, stream_generator

logger = logging.getLogger(__name__)

DEFAULT_BURN_IN = 200
DEFAULT_GAP_TOL = 0.05
INIT_RETRIES = 8


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal unstable basis q (n x m) and the R factor of the last step"""
    q: np.ndarray
    r_last: np.ndarray
    step: int = 0

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class LESpectrum:
    exponents: Tuple[float, ...]
    trajectory_length: int
    burn_in: int

    def to_dict(self):
        return {
            "exponents": list(self.exponents),
            "t": self.trajectory_length,
            "burn_in": self.burn_in,
        }


def init_frame(n: int, m: int, seed: int, stream_id: int = TANGENT_STREAM) -> TangentFrame:
    """Random orthonormal n x m frame from Gaussian draws of the (seed, stream_id) generator"""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    last_error = None
    for attempt in range(INIT_RETRIES + 1):
        rng = stream_generator(seed + attempt, stream_id)
        try:
            qr = qr_householder(rng.standard_normal((n, m)))
        except DegenerateBasis as e:
            logger.warning(f"Random frame degenerate for seed {seed + attempt}, retrying")
            last_error = e
            continue
        return TangentFrame(q=qr.q, r_last=np.eye(m), step=0)
    raise last_error


def step_frame(frame: TangentFrame, jac: np.ndarray) -> TangentFrame:
    """Push the frame through the Jacobian and re-orthonormalize"""
    qr = qr_householder(jac @ frame.q)
    return TangentFrame(q=qr.q, r_last=qr.r, step=frame.step + 1)


def benettin_le(map_system: MapSystem, x0: np.ndarray, count_m: int, t: int,
                burn_in: int = DEFAULT_BURN_IN, seed: int = 0,
                progress_every: int = 1_000_000) -> LESpectrum:
    """Leading count_m Lyapunov exponents, in nats per iteration"""
    if count_m > map_system.dim:
        raise ValueError(f"cannot estimate {count_m} exponents of a {map_system.dim}-D map")
    if t < 1:
        raise ValueError(f"trajectory length must be >= 1, got {t}")

    frame = init_frame(map_system.dim, count_m, seed)
    x = np.asarray(x0, dtype=np.float64)
    log_sums = np.zeros(count_m)
    for k in range(burn_in + t):
        try:
            frame = step_frame(frame, map_system.jacobian(map_system.nudge(x)))
        except NumericalError as e:
            raise e.with_step(k)
        if k >= burn_in:
            log_sums += np.log(np.diag(frame.r_last))
        x = map_system.apply(x)
        if progress_every and (k + 1) % progress_every == 0:
            logger.info(f"Benettin step {k + 1}/{burn_in + t}")

    exponents = log_sums / t
    if not np.all(np.isfinite(exponents)):
        raise NonFiniteState(f"non-finite Lyapunov exponents: {exponents}")
    exponents = tuple(float(v) for v in sorted(exponents, reverse=True))
    logger.info(f"Lyapunov exponents for {map_system.name}: {exponents}")
    return LESpectrum(exponents=exponents, trajectory_length=t, burn_in=burn_in)


def detect_unstable_dim(spectrum: LESpectrum, gap_tol: float = DEFAULT_GAP_TOL) -> int:
    """Number of exponents above gap_tol; refuses spectra with near-zero exponents"""
    near_zero: List[float] = [v for v in spectrum.exponents if abs(v) <= gap_tol]
    if near_zero:
        raise AmbiguousSpectrum(
            f"exponents {near_zero} lie within {gap_tol} of zero; "
            f"increase the trajectory length or check hyperbolicity"
        )
    return sum(1 for v in spectrum.exponents if v > gap_tol)
