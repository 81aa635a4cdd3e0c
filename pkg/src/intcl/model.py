"""Linearly parameterized plants ``xdot = Y(x, t) theta + u`` and reference trajectories.

Regressor and trajectory callables are written so that numba can compile them
as-is (plain numpy/math on float arrays); the simulator relies on that.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Regressor = Callable[[np.ndarray, float], np.ndarray]


class DomainError(ValueError):
    """Raised when a state or time argument is not finite or out of range."""


@dataclass(frozen=True)
class PlantModel:
    n: int
    m: int
    regressor: Regressor
    true_theta: np.ndarray = field(repr=False)
    name: str = "plant"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("state and parameter dimensions must be positive")
        theta = np.array(self.true_theta, dtype=float).reshape(-1)
        if theta.shape != (self.m,):
            raise ValueError(f"true_theta must have length {self.m}, got {theta.shape}")
        theta.flags.writeable = False
        object.__setattr__(self, "true_theta", theta)


@dataclass(frozen=True)
class DesiredTrajectory:
    x_d: Callable[[float], np.ndarray]
    x_d_dot: Callable[[float], np.ndarray]
    name: str = "trajectory"


def _check_point(x, t, n):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise DomainError(f"state must have length {n}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite state {x}")
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"time must be finite and non-negative, got {t}")
    return x


def eval_regressor(model: PlantModel, x, t: float) -> np.ndarray:
    x = _check_point(x, t, model.n)
    Y = np.asarray(model.regressor(x, float(t)), dtype=float)
    if Y.shape != (model.n, model.m):
        raise ValueError(f"regressor of {model.name!r} returned shape {Y.shape}, "
                         f"expected {(model.n, model.m)}")
    return Y


def eval_drift(model: PlantModel, x, t: float) -> np.ndarray:
    """Drift ``f(x, t) = Y(x, t) @ theta`` using the plant's true parameters."""
    return eval_regressor(model, x, t) @ model.true_theta


def eval_desired(traj: DesiredTrajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    if not np.isfinite(t) or t < 0:
        raise DomainError(f"time must be finite and non-negative, got {t}")
    t = float(t)
    return np.asarray(traj.x_d(t), dtype=float), np.asarray(traj.x_d_dot(t), dtype=float)


# --- two-state example plant -------------------------------------------------

def two_state_regressor(x, t):
    Y = np.zeros((2, 4))
    Y[0, 0] = x[0] * x[0]
    Y[0, 1] = np.sin(x[1])
    Y[1, 1] = x[1] * np.sin(t)
    Y[1, 2] = x[0]
    Y[1, 3] = x[0] * x[1]
    return Y


def two_state_desired(t):
    a = 10.0 * (1.0 - np.exp(-0.1 * t))
    return np.array([a * np.sin(2.0 * t), a * 0.4 * np.cos(3.0 * t)])


def two_state_desired_dot(t):
    decay = np.exp(-0.1 * t)
    a = 10.0 * (1.0 - decay)
    return np.array([
        decay * np.sin(2.0 * t) + a * 2.0 * np.cos(2.0 * t),
        decay * 0.4 * np.cos(3.0 * t) - a * 1.2 * np.sin(3.0 * t),
    ])


TWO_STATE = PlantModel(
    n=2, m=4,
    regressor=two_state_regressor,
    true_theta=np.array([5.0, 10.0, 15.0, 20.0]),
    name="two_state",
)
TWO_STATE_TRAJECTORY = DesiredTrajectory(two_state_desired, two_state_desired_dot, name="two_state")


# --- catalog ------------------------------------------------------------------

_CATALOG: dict[str, tuple[PlantModel, DesiredTrajectory]] = {}


def register_model(model: PlantModel, trajectory: DesiredTrajectory, *, replace=False):
    if model.name in _CATALOG and not replace:
        raise KeyError(f"model {model.name!r} already registered")
    _CATALOG[model.name] = (model, trajectory)


def lookup_model(name: str) -> tuple[PlantModel, DesiredTrajectory]:
    try:
        return _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {sorted(_CATALOG)}") from None


def registered_models() -> list[str]:
    return sorted(_CATALOG)


register_model(TWO_STATE, TWO_STATE_TRAJECTORY)
