"""Small dense matrix routines.

Matrices are float64 numpy arrays in C (row-major) order. Everything here is a
pure function of its inputs. QR and triangular inversion validate their
arguments and run the compiled kernels.
"""
from dataclasses import dataclass

import numpy as np

from srb_gradient.errors import DegenerateBasis, DimensionMismatch, NonFiniteState, SingularR
from srb_gradient.kernels import householder_qr, upper_triangular_inverse

# Relative threshold on |r_ii| below which the QR basis is declared collapsed
DEGENERATE_TOL = 1e-13
# Absolute threshold on |r_ii| for triangular inversion
SINGULAR_TOL = 1e-13

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class QRPair:
    """Thin QR factors: q is n x m with orthonormal columns, r is m x m upper triangular"""
    q: np.ndarray
    r: np.ndarray


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    return a


def qr_householder(a) -> QRPair:
    """Householder QR of an n x m matrix (n >= m) with a positive diagonal in r.

    Raises DegenerateBasis when a diagonal entry of r falls below
    1e-13 times the largest absolute entry of a.
    """
    a = _as_matrix(a, "a")
    n, m = a.shape
    if n < m:
        raise DimensionMismatch(f"QR needs rows >= cols, got {n}x{m}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteState("QR input contains non-finite entries")

    scale = float(np.max(np.abs(a)))
    q, r = householder_qr(np.ascontiguousarray(a))
    diag = np.diag(r)
    if scale == 0.0 or np.any(diag < DEGENERATE_TOL * scale):
        raise DegenerateBasis(
            f"QR basis collapsed: min r_ii = {diag.min():.3e}, scale = {scale:.3e}"
        )
    return QRPair(q=q, r=r)


def invert_upper_triangular(r) -> np.ndarray:
    """Inverse of an upper-triangular matrix by back-substitution"""
    r = _as_matrix(r, "r")
    m, cols = r.shape
    if m != cols:
        raise DimensionMismatch(f"R must be square, got {m}x{cols}")
    diag = np.abs(np.diag(r))
    if np.any(diag < SINGULAR_TOL):
        raise SingularR(f"R has a vanishing diagonal entry: min |r_ii| = {diag.min():.3e}")
    if not np.all(np.isfinite(r)):
        raise NonFiniteState("R contains non-finite entries")
    return upper_triangular_inverse(np.ascontiguousarray(r))


def jacobi_singular_values(a) -> np.ndarray:
    """Singular values (descending) by one-sided Jacobi rotations on the columns of a"""
    u = np.array(_as_matrix(a, "a"), copy=True)
    k = u.shape[1]
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(k - 1):
            for s in range(p + 1, k):
                alpha = float(u[:, p] @ u[:, p])
                beta = float(u[:, s] @ u[:, s])
                gamma = float(u[:, p] @ u[:, s])
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = c * t
                up = u[:, p].copy()
                u[:, p] = c * up - sn * u[:, s]
                u[:, s] = sn * up + c * u[:, s]
        if not rotated:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


def principal_angle_measure(qu, qs) -> float:
    """Sine of the smallest principal angle between span(qu) and span(qs).

    Both inputs must have orthonormal columns. The sines are the singular
    values of the residual of the lower-dimensional basis after projection
    onto the other subspace, which keeps small angles accurate.
    """
    qu = _as_matrix(qu, "qu")
    qs = _as_matrix(qs, "qs")
    if qu.shape[0] != qs.shape[0]:
        raise DimensionMismatch(
            f"subspaces live in different spaces: {qu.shape[0]} vs {qs.shape[0]} rows"
        )
    big, small = (qu, qs) if qs.shape[1] <= qu.shape[1] else (qs, qu)
    residual = small - big @ (big.T @ small)
    sines = jacobi_singular_values(residual)
    return float(np.clip(sines[-1], 0.0, 1.0))
