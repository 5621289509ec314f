"""Named test functions v(x) with analytic gradients.

Gradients are checked against central finite differences when an observable
is registered, so a wrong closed form fails at import rather than polluting
an integration-by-parts run.
"""
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from srb_gradient.errors import ConfigValidationError, UnknownObservableError
from srb_gradient.rng import stream_generator

FD_STEP = 1e-6
FD_TOL = 1e-5
FD_POINTS = 16
# Validation box stays clear of the 2*pi wrap of the built-in maps
VALIDATION_BOX = (0.1, 2.0 * math.pi - 0.1)


@dataclass(frozen=True)
class Observable:
    name: str
    eval: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    dim: Optional[int] = None


def _one(x):
    return 1.0


def _one_grad(x):
    return np.zeros(len(x))


def _sin_exp(x):
    return math.sin(x[0]) * math.exp(x[1])


def _sin_exp_grad(x):
    e = math.exp(x[1])
    return np.array([math.cos(x[0]) * e, math.sin(x[0]) * e])


def _sin_sin_lin(x):
    return math.sin(x[0]) * math.sin(1.5 * x[1]) * x[2]


def _sin_sin_lin_grad(x):
    s1, c1 = math.sin(x[0]), math.cos(x[0])
    s2, c2 = math.sin(1.5 * x[1]), math.cos(1.5 * x[1])
    return np.array([c1 * s2 * x[2], 1.5 * s1 * c2 * x[2], s1 * s2])


def _sin_2pi(x):
    return math.sin(2.0 * math.pi * x[0])


def _sin_2pi_grad(x):
    out = np.zeros(len(x))
    out[0] = 2.0 * math.pi * math.cos(2.0 * math.pi * x[0])
    return out


def check_gradient(obs: Observable, dim: int, seed: int = 0) -> float:
    """Largest relative mismatch between the analytic gradient and central differences"""
    rng = stream_generator(seed, 0)
    lo, hi = VALIDATION_BOX
    worst = 0.0
    for _ in range(FD_POINTS):
        x = lo + (hi - lo) * rng.random(dim)
        grad = obs.gradient(x)
        for i in range(dim):
            step = np.zeros(dim)
            step[i] = FD_STEP
            fd = (obs.eval(x + step) - obs.eval(x - step)) / (2.0 * FD_STEP)
            worst = max(worst, abs(grad[i] - fd) / max(1.0, abs(grad[i])))
    return worst


OBSERVABLES: Dict[str, Observable] = {}


def register_observable(obs: Observable) -> Observable:
    dim = obs.dim if obs.dim is not None else 2
    mismatch = check_gradient(obs, dim)
    if mismatch > FD_TOL:
        raise ConfigValidationError(
            f"observable '{obs.name}' gradient disagrees with finite differences ({mismatch:.2e})"
        )
    OBSERVABLES[obs.name] = obs
    return obs


def get_observable(name: str) -> Observable:
    if name not in OBSERVABLES:
        raise UnknownObservableError(
            f"unknown observable '{name}'; registered: {', '.join(sorted(OBSERVABLES))}"
        )
    return OBSERVABLES[name]


register_observable(Observable("const_one", _one, _one_grad))
register_observable(Observable("sin_exp_2d", _sin_exp, _sin_exp_grad, dim=2))
register_observable(Observable("sin_sin_lin_3d", _sin_sin_lin, _sin_sin_lin_grad, dim=3))
register_observable(Observable("sin_2pi_x1", _sin_2pi, _sin_2pi_grad))
