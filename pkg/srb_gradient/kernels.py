"""Compiled per-step kernels.

Kernels take and return plain float64 arrays and never raise. Their callers
in linalg, curvature and maps validate inputs and results and turn failures
into the package's exceptions.
"""
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
ONION_HEIGHT = 0.97
ONION_SINGULAR_TOL = 1e-12
ZERO_DERIVATIVE = 1e-300


@njit(cache=True)
def householder_qr(a):
    """Thin QR of an n x m array with r_ii >= 0; reflectors avoid cancellation"""
    n, m = a.shape
    r = a.copy()
    vs = np.zeros((m, n))
    betas = np.zeros(m)
    for j in range(m):
        sigma = 0.0
        for i in range(j + 1, n):
            sigma += r[i, j] * r[i, j]
        x0 = r[j, j]
        vs[j, j] = 1.0
        beta = 0.0
        mu = x0
        if sigma != 0.0 or x0 < 0.0:
            mu = math.sqrt(x0 * x0 + sigma)
            if x0 <= 0.0:
                v0 = x0 - mu
            else:
                v0 = -sigma / (x0 + mu)
            beta = 2.0 * v0 * v0 / (sigma + v0 * v0)
            for i in range(j + 1, n):
                vs[j, i] = r[i, j] / v0
            for c in range(j, m):
                s = r[j, c]
                for i in range(j + 1, n):
                    s += vs[j, i] * r[i, c]
                s *= beta
                r[j, c] -= s
                for i in range(j + 1, n):
                    r[i, c] -= s * vs[j, i]
        betas[j] = beta
        r[j, j] = mu
        for i in range(j + 1, n):
            r[i, j] = 0.0

    q = np.zeros((n, m))
    for i in range(m):
        q[i, i] = 1.0
    for j in range(m - 1, -1, -1):
        beta = betas[j]
        if beta == 0.0:
            continue
        for c in range(m):
            s = q[j, c]
            for i in range(j + 1, n):
                s += vs[j, i] * q[i, c]
            s *= beta
            q[j, c] -= s
            for i in range(j + 1, n):
                q[i, c] -= s * vs[j, i]

    out = np.zeros((m, m))
    for i in range(m):
        for c in range(i, m):
            out[i, c] = r[i, c]
    return q, out


@njit(cache=True)
def upper_triangular_inverse(r):
    m = r.shape[0]
    inv = np.zeros((m, m))
    for j in range(m):
        inv[j, j] = 1.0 / r[j, j]
        for i in range(j - 1, -1, -1):
            s = 0.0
            for k in range(i + 1, j + 1):
                s += r[i, k] * inv[k, j]
            inv[i, j] = -s / r[i, i]
    return inv


@njit(cache=True)
def _packed(i, j):
    if i < j:
        i, j = j, i
    return i * (i + 1) // 2 + j


@njit(cache=True)
def curvature_update(packed, jac, hess_packed, r_inv, q_next):
    """One full curvature step on packed (m(m+1)/2, n) storage.

    hess_packed holds the Hessian actions on pairs of the previous frame's
    columns. Returns the rescaled family and g at the new point.
    """
    p, n = packed.shape
    m = r_inv.shape[0]
    raw = hess_packed.copy()
    for idx in range(p):
        for a in range(n):
            s = 0.0
            for b in range(n):
                s += jac[a, b] * packed[idx, b]
            raw[idx, a] += s

    # r_inv is upper triangular: only rows pp <= i contribute to column i
    out = np.zeros((p, n))
    for i in range(m):
        for j in range(i + 1):
            dst = _packed(i, j)
            for pp in range(i + 1):
                for qq in range(j + 1):
                    w = r_inv[pp, i] * r_inv[qq, j]
                    if w == 0.0:
                        continue
                    src = _packed(pp, qq)
                    for a in range(n):
                        out[dst, a] += w * raw[src, a]

    g = np.zeros(m)
    for i in range(m):
        s = 0.0
        for j in range(m):
            src = _packed(i, j)
            for a in range(n):
                s += q_next[a, j] * out[src, a]
        g[i] = -s
    return out, g


@njit(cache=True)
def _unit_interval(y):
    y = y % 1.0
    return 0.0 if y >= 1.0 else y


@njit(cache=True)
def sawtooth_step(x, s):
    """(image, d1, d2, regular) of x -> 2x + s sin(2 pi x) mod 1"""
    y = _unit_interval(2.0 * x + s * math.sin(TWO_PI * x))
    d1 = 2.0 + TWO_PI * s * math.cos(TWO_PI * x)
    d2 = -TWO_PI * TWO_PI * s * math.sin(TWO_PI * x)
    return y, d1, d2, True


@njit(cache=True)
def onion_step(x, gamma):
    """(image, d1, d2, regular) of the onion map; irregular at the fold and end points"""
    u = 1.0 - 2.0 * x
    w = abs(u) ** gamma
    y = _unit_interval(ONION_HEIGHT * math.sqrt(max(0.0, 1.0 - w)))
    if abs(u) < 2.0 * ONION_SINGULAR_TOL or 1.0 - w < ONION_SINGULAR_TOL:
        return y, 0.0, 0.0, False
    root = math.sqrt(1.0 - w)
    d1 = ONION_HEIGHT * gamma * math.copysign(1.0, u) * abs(u) ** (gamma - 1.0) / root
    d2 = (ONION_HEIGHT * gamma * abs(u) ** (gamma - 2.0) / root
          * (2.0 * (1.0 - gamma) - gamma * w / (1.0 - w)))
    return y, d1, d2, True


@njit
def binned_run(step, param, x, g, g0, settle, settle_len, n_steps, record, sums, counts, lo, width):
    """Iterate a 1-D map with its scalar gradient recursion, adding g to per-bin sums.

    A singular step resets g to g0 and leaves the next settle_len samples
    unrecorded. Returns (x, g, settle, skipped).
    """
    bins = sums.shape[0]
    skipped = 0
    for _ in range(n_steps):
        y, d1, d2, regular = step(x, param)
        if regular and abs(d1) >= ZERO_DERIVATIVE:
            if record:
                if settle > 0:
                    skipped += 1
                else:
                    b = int((x - lo) / width)
                    b = min(max(b, 0), bins - 1)
                    sums[b] += g
                    counts[b] += 1
            if settle > 0:
                settle -= 1
            g = g / d1 - d2 / (d1 * d1)
        else:
            if record:
                skipped += 1
            g = g0
            settle = settle_len
        x = y
    return x, g, settle, skipped
