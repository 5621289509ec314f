"""Chaotic maps with closed-form Jacobians and Hessian bilinear actions.

Derivatives come from the smooth part of each map: the ``mod`` and ``floor``
terms are locally constant and contribute nothing. Points are float64 arrays of
shape ``(n,)`` reduced into the map's periodic domain.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from srb_gradient.errors import (
    ConfigValidationError,
    DerivativeSingularity,
    NonFiniteState,
    UnknownMapError,
)
from srb_gradient.kernels import ONION_HEIGHT, ONION_SINGULAR_TOL, TWO_PI, onion_step, sawtooth_step
from srb_gradient.rng import X0_STREAM, stream_generator

# Points closer than this to a floor/branch line are pushed to its right side
NUDGE = 1e-12


class MapSystem(ABC):
    """An evaluatable map on a box of periodic intervals"""

    name: str = "map"
    dim: int = 1
    unstable_dim_hint: Optional[int] = None
    # compiled (x, param) -> (image, d1, d2, regular) for 1-D maps with one parameter
    step_kernel = None

    @property
    @abstractmethod
    def domain(self) -> Tuple[Tuple[float, float], ...]:
        """Per-coordinate (lower, upper) interval bounds"""

    @property
    def volume(self) -> float:
        """Lebesgue measure of the domain box"""
        return math.prod(hi - lo for lo, hi in self.domain)

    @property
    def params(self) -> Tuple[float, ...]:
        return ()

    @property
    def breakpoints(self) -> Tuple[Tuple[float, ...], ...]:
        """Per-coordinate floor or branch lines in the pre-image"""
        return tuple(() for _ in range(self.dim))

    @abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray:
        """Image of x, reduced into the domain"""

    @abstractmethod
    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """n x n Jacobian at x"""

    @abstractmethod
    def hessian_bilinear(self, x: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Vector with components sum_ij d_i d_j phi^(k)(x) u^(i) v^(j)"""

    def reduce(self, x) -> np.ndarray:
        """Wrap every coordinate into its periodic interval"""
        x = np.asarray(x, dtype=np.float64)
        lower = np.array([lo for lo, _ in self.domain])
        period = np.array([hi - lo for lo, hi in self.domain])
        y = lower + np.mod(x - lower, period)
        # mod can round up to exactly one period for tiny negative offsets
        return np.where(y >= lower + period, lower, y)

    def nudge(self, x: np.ndarray) -> np.ndarray:
        """Move points sitting on a floor/branch line to its right side"""
        y = None
        for i, lines in enumerate(self.breakpoints):
            for b in lines:
                if abs(x[i] - b) < NUDGE:
                    if y is None:
                        y = np.array(x, dtype=np.float64, copy=True)
                    y[i] = b + NUDGE
        return x if y is None else y

    def random_point(self, seed: int, stream_id: int = X0_STREAM) -> np.ndarray:
        """Uniform draw from the domain using the (seed, stream_id) generator"""
        rng = stream_generator(seed, stream_id)
        lower = np.array([lo for lo, _ in self.domain])
        upper = np.array([hi for _, hi in self.domain])
        return lower + (upper - lower) * rng.random(self.dim)

    def make_point(self, coords: Sequence[float]) -> np.ndarray:
        """Validate and reduce user-supplied coordinates"""
        x = np.asarray(coords, dtype=np.float64).reshape(-1)
        if x.shape != (self.dim,):
            raise ConfigValidationError(f"{self.name} needs {self.dim} coordinates, got {x.size}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteState(f"initial point has non-finite coordinates: {x}")
        return self.reduce(x)

    def describe(self) -> Dict[str, object]:
        return {"map": self.name, "params": list(self.params), "dim": self.dim}


@dataclass(frozen=True)
class Baker2DParams:
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0
    s4: float = 0.0


@dataclass(frozen=True)
class Baker3DParams:
    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0


class Baker2D(MapSystem):
    """Perturbed Baker's map on [0, 2pi]^2"""

    name = "baker2d"
    dim = 2
    unstable_dim_hint = 1

    def __init__(self, p: Baker2DParams):
        self._p = p

    @property
    def domain(self):
        return ((0.0, TWO_PI), (0.0, TWO_PI))

    @property
    def params(self):
        p = self._p
        return (p.s1, p.s2, p.s3, p.s4)

    @property
    def breakpoints(self):
        return ((math.pi,), ())

    def apply(self, x):
        p = self._p
        x1, x2 = x[0], x[1]
        wave = math.sin(2.0 * x1) * math.sin(x2)
        y1 = 2.0 * x1 + 0.5 * p.s1 * math.sin(0.5 * x1) + 0.5 * p.s2 * wave
        y2 = (0.5 * x2 + math.pi * math.floor(x1 / math.pi)
              + p.s3 * math.sin(x2) + 0.5 * p.s4 * wave)
        return self.reduce((y1, y2))

    def jacobian(self, x):
        p = self._p
        x1, x2 = x[0], x[1]
        s2x, c2x = math.sin(2.0 * x1), math.cos(2.0 * x1)
        sy, cy = math.sin(x2), math.cos(x2)
        return np.array([
            [2.0 + 0.25 * p.s1 * math.cos(0.5 * x1) + p.s2 * c2x * sy, 0.5 * p.s2 * s2x * cy],
            [p.s4 * c2x * sy, 0.5 + p.s3 * cy + 0.5 * p.s4 * s2x * cy],
        ])

    def hessian_bilinear(self, x, u, v):
        p = self._p
        x1, x2 = x[0], x[1]
        s2x, c2x = math.sin(2.0 * x1), math.cos(2.0 * x1)
        sy, cy = math.sin(x2), math.cos(x2)
        uv11 = u[0] * v[0]
        uv12 = u[0] * v[1] + u[1] * v[0]
        uv22 = u[1] * v[1]
        h1 = ((-0.125 * p.s1 * math.sin(0.5 * x1) - 2.0 * p.s2 * s2x * sy) * uv11
              + p.s2 * c2x * cy * uv12
              - 0.5 * p.s2 * s2x * sy * uv22)
        h2 = (-2.0 * p.s4 * s2x * sy * uv11
              + p.s4 * c2x * cy * uv12
              + (-p.s3 * sy - 0.5 * p.s4 * s2x * sy) * uv22)
        return np.array([h1, h2])


class Baker3D(MapSystem):
    """Baker's map on [0, 2pi]^3 with two expanding directions"""

    name = "baker3d"
    dim = 3
    unstable_dim_hint = 2

    def __init__(self, p: Baker3DParams):
        self._p = p

    @property
    def domain(self):
        return ((0.0, TWO_PI),) * 3

    @property
    def params(self):
        p = self._p
        return (p.s1, p.s2, p.s3)

    @property
    def breakpoints(self):
        third = TWO_PI / 3.0
        return ((math.pi,), (third, 2.0 * third), ())

    def apply(self, x):
        p = self._p
        x1, x2, x3 = x[0], x[1], x[2]
        y1 = 2.0 * x1 + p.s1 * math.sin(2.0 * x1) * math.sin(1.5 * x2)
        y2 = 3.0 * x2 + p.s2 * math.sin(x1) * math.sin(3.0 * x2)
        y3 = (x3 / 6.0 + math.pi * math.floor(x1 / math.pi)
              + math.pi / 3.0 * math.floor(x2 / (TWO_PI / 3.0))
              + p.s3 * math.sin(6.0 * x3))
        return self.reduce((y1, y2, y3))

    def jacobian(self, x):
        p = self._p
        x1, x2, x3 = x[0], x[1], x[2]
        return np.array([
            [2.0 + 2.0 * p.s1 * math.cos(2.0 * x1) * math.sin(1.5 * x2),
             1.5 * p.s1 * math.sin(2.0 * x1) * math.cos(1.5 * x2), 0.0],
            [p.s2 * math.cos(x1) * math.sin(3.0 * x2),
             3.0 + 3.0 * p.s2 * math.sin(x1) * math.cos(3.0 * x2), 0.0],
            [0.0, 0.0, 1.0 / 6.0 + 6.0 * p.s3 * math.cos(6.0 * x3)],
        ])

    def hessian_bilinear(self, x, u, v):
        p = self._p
        x1, x2, x3 = x[0], x[1], x[2]
        uv11 = u[0] * v[0]
        uv12 = u[0] * v[1] + u[1] * v[0]
        uv22 = u[1] * v[1]
        a, b = math.sin(2.0 * x1), math.cos(2.0 * x1)
        c, d = math.sin(1.5 * x2), math.cos(1.5 * x2)
        h1 = p.s1 * (-4.0 * a * c * uv11 + 3.0 * b * d * uv12 - 2.25 * a * c * uv22)
        e, f = math.sin(x1), math.cos(x1)
        g, h = math.sin(3.0 * x2), math.cos(3.0 * x2)
        h2 = p.s2 * (-e * g * uv11 + 3.0 * f * h * uv12 - 9.0 * e * g * uv22)
        h3 = -36.0 * p.s3 * math.sin(6.0 * x3) * u[2] * v[2]
        return np.array([h1, h2, h3])


class ArnoldCat(MapSystem):
    """x -> A x mod 1 with A = [[2, 1], [1, 1]]"""

    name = "cat"
    dim = 2
    unstable_dim_hint = 1
    A = np.array([[2.0, 1.0], [1.0, 1.0]])

    @property
    def domain(self):
        return ((0.0, 1.0), (0.0, 1.0))

    def apply(self, x):
        return self.reduce((2.0 * x[0] + x[1], x[0] + x[1]))

    def jacobian(self, x):
        return self.A.copy()

    def hessian_bilinear(self, x, u, v):
        return np.zeros(2)


class Sawtooth(MapSystem):
    """x -> 2x + s sin(2 pi x) mod 1; branches stay monotone for |s| < 1/(2 pi)"""

    name = "sawtooth"
    dim = 1
    unstable_dim_hint = 1
    step_kernel = staticmethod(sawtooth_step)

    def __init__(self, s: float):
        self.s = float(s)

    @property
    def domain(self):
        return ((0.0, 1.0),)

    @property
    def params(self):
        return (self.s,)

    def apply(self, x):
        return self.reduce((2.0 * x[0] + self.s * math.sin(TWO_PI * x[0]),))

    def jacobian(self, x):
        return np.array([[2.0 + TWO_PI * self.s * math.cos(TWO_PI * x[0])]])

    def hessian_bilinear(self, x, u, v):
        return np.array([-TWO_PI * TWO_PI * self.s * math.sin(TWO_PI * x[0]) * u[0] * v[0]])


class Onion(MapSystem):
    """x -> 0.97 sqrt(1 - |1 - 2x|^gamma), two-to-one with a fold at x = 0.5"""

    name = "onion"
    dim = 1
    unstable_dim_hint = 1
    step_kernel = staticmethod(onion_step)
    HEIGHT = ONION_HEIGHT

    def __init__(self, gamma: float):
        self.gamma = float(gamma)

    @property
    def domain(self):
        return ((0.0, 1.0),)

    @property
    def params(self):
        return (self.gamma,)

    @property
    def breakpoints(self):
        return ((0.5,),)

    def apply(self, x):
        w = abs(1.0 - 2.0 * x[0]) ** self.gamma
        return self.reduce((self.HEIGHT * math.sqrt(max(0.0, 1.0 - w)),))

    def _parts(self, x0: float):
        u = 1.0 - 2.0 * x0
        if abs(u) < 2.0 * ONION_SINGULAR_TOL:
            raise DerivativeSingularity(f"onion derivative unbounded at x = {x0!r} (fold)")
        w = abs(u) ** self.gamma
        if 1.0 - w < ONION_SINGULAR_TOL:
            raise DerivativeSingularity(f"onion derivative unbounded at x = {x0!r} (end point)")
        return u, w

    def jacobian(self, x):
        u, w = self._parts(x[0])
        g = self.gamma
        d1 = self.HEIGHT * g * math.copysign(1.0, u) * abs(u) ** (g - 1.0) / math.sqrt(1.0 - w)
        return np.array([[d1]])

    def hessian_bilinear(self, x, u_vec, v_vec):
        u, w = self._parts(x[0])
        g = self.gamma
        d2 = (self.HEIGHT * g * abs(u) ** (g - 2.0) / math.sqrt(1.0 - w)
              * (2.0 * (1.0 - g) - g * w / (1.0 - w)))
        return np.array([d2 * u_vec[0] * v_vec[0]])


class Embedded1D(MapSystem):
    """Invertible 2-D analogue of a two-to-one interval map.

    (x1, x2) -> (phi(x1), x2/2 + 0.5 [x1 >= split]); unstable manifolds are
    horizontal lines.
    """

    dim = 2
    unstable_dim_hint = 1

    def __init__(self, base: MapSystem, split: float = 0.5):
        if base.dim != 1:
            raise ConfigValidationError(f"can only embed 1-D maps, got dim {base.dim}")
        self.base = base
        self.split = float(split)
        self.name = f"{base.name}2d"

    @property
    def domain(self):
        return ((0.0, 1.0), (0.0, 1.0))

    @property
    def params(self):
        return self.base.params

    @property
    def breakpoints(self):
        return ((self.split,), ())

    def apply(self, x):
        y1 = self.base.apply(x[:1])[0]
        y2 = 0.5 * x[1] + (0.5 if x[0] >= self.split else 0.0)
        return self.reduce((y1, y2))

    def jacobian(self, x):
        d1 = self.base.jacobian(x[:1])[0, 0]
        return np.array([[d1, 0.0], [0.0, 0.5]])

    def hessian_bilinear(self, x, u, v):
        h = self.base.hessian_bilinear(x[:1], u[:1], v[:1])[0]
        return np.array([h, 0.0])


def baker2d(params: Baker2DParams) -> MapSystem:
    return Baker2D(params)


def baker3d(params: Baker3DParams) -> MapSystem:
    return Baker3D(params)


def arnold_cat() -> MapSystem:
    return ArnoldCat()


def sawtooth(s: float) -> MapSystem:
    return Sawtooth(s)


def onion(gamma: float) -> MapSystem:
    return Onion(gamma)


def embed_1d(map1d: MapSystem, split: float = 0.5) -> MapSystem:
    return Embedded1D(map1d, split)


class MapEntry(NamedTuple):
    arity: int
    factory: Callable[[Sequence[float]], MapSystem]
    defaults: Tuple[float, ...]


MAP_REGISTRY: Dict[str, MapEntry] = {
    "baker2d": MapEntry(4, lambda p: baker2d(Baker2DParams(*p)), (0.0, 0.4, 0.0, 0.0)),
    "baker3d": MapEntry(3, lambda p: baker3d(Baker3DParams(*p)), (0.0, 0.9, 0.1)),
    "cat": MapEntry(0, lambda p: arnold_cat(), ()),
    "sawtooth": MapEntry(1, lambda p: sawtooth(p[0]), (0.1,)),
    "onion": MapEntry(1, lambda p: onion(p[0]), (0.4,)),
    "sawtooth2d": MapEntry(1, lambda p: embed_1d(sawtooth(p[0])), (0.1,)),
    "onion2d": MapEntry(1, lambda p: embed_1d(onion(p[0])), (0.4,)),
}


def check_map_name(name: str) -> None:
    if name not in MAP_REGISTRY:
        raise UnknownMapError(
            f"unknown map '{name}'; registered maps: {', '.join(sorted(MAP_REGISTRY))}"
        )


def build_map(name: str, params: Optional[Sequence[float]] = None) -> MapSystem:
    """Construct a registered map, checking the parameter count; None selects the defaults"""
    check_map_name(name)
    entry = MAP_REGISTRY[name]
    params = entry.defaults if params is None else [float(p) for p in params]
    if len(params) != entry.arity:
        raise ConfigValidationError(f"map '{name}' takes {entry.arity} parameters, got {len(params)}")
    return entry.factory(params)
