"""Tracking controller and adaptive update terms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .memory import HistoryStack, IntegrationBuffer
from .model import DesiredTrajectory, PlantModel, eval_desired


class DivergenceError(FloatingPointError):
    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} at t={t}")
        self.t = t


def _check_pd(M, name, tol=1e-12):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    if np.max(np.abs(M - M.T), initial=0.0) > tol:
        raise ValueError(f"{name} is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    if lam[0] <= 0:
        raise ValueError(f"{name} is not positive definite (min eigenvalue {lam[0]:.3g})")
    M = M.copy()
    M.flags.writeable = False
    return M


@dataclass(frozen=True)
class Gains:
    """Feedback gain ``K`` (n x n), adaptation gain ``Gamma`` (m x m) and learning gain ``k_cl``."""
    K: np.ndarray
    Gamma: np.ndarray
    k_cl: float
    Gamma_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "K", _check_pd(self.K, "K"))
        object.__setattr__(self, "Gamma", _check_pd(self.Gamma, "Gamma"))
        if not (np.isfinite(self.k_cl) and self.k_cl > 0):
            raise ValueError(f"k_cl must be positive, got {self.k_cl}")
        object.__setattr__(self, "k_cl", float(self.k_cl))
        inv = np.linalg.inv(self.Gamma)
        inv = 0.5 * (inv + inv.T)
        inv.flags.writeable = False
        object.__setattr__(self, "Gamma_inv", inv)

    @classmethod
    def scaled_identity(cls, n: int, m: int, K_s: float, Gamma_s: float, k_cl: float) -> "Gains":
        return cls(K_s * np.eye(n), Gamma_s * np.eye(m), k_cl)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.Gamma.shape[0]


@dataclass
class EstimatorState:
    theta_hat: np.ndarray


def control_input(x_meas, t, theta_hat, traj: DesiredTrajectory, gains: Gains,
                  model: PlantModel) -> np.ndarray:
    """Certainty-equivalence tracking law ``u = xd_dot - Y theta_hat - K e``."""
    x_meas = np.asarray(x_meas, dtype=float)
    x_d, x_d_dot = eval_desired(traj, t)
    e = x_meas - x_d
    Y = np.asarray(model.regressor(x_meas, float(t)), dtype=float)
    u = x_d_dot - Y @ theta_hat - gains.K @ e
    if not np.all(np.isfinite(u)):
        raise DivergenceError(t, "control input")
    return u


def gradient_term(Y, e, gains: Gains) -> np.ndarray:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    e = np.asarray(e, dtype=float).reshape(-1)
    if Y.shape != (e.shape[0], gains.m):
        raise ValueError(f"regressor shape {Y.shape} incompatible with error of length "
                         f"{e.shape[0]} and {gains.m} parameters")
    return gains.Gamma @ (Y.T @ e)


def _learning_sum(stack: HistoryStack, theta_hat, gains: Gains) -> np.ndarray:
    theta_hat = np.asarray(theta_hat, dtype=float)
    total = np.zeros(gains.m)
    for entry in stack.entries:
        A = np.atleast_2d(np.asarray(entry.script_Y, dtype=float))
        total += A.T @ (entry.delta_x - entry.script_U - A @ theta_hat)
    return gains.k_cl * (gains.Gamma @ total)


def icl_term(stack: HistoryStack, theta_hat, gains: Gains) -> np.ndarray:
    """Integral learning correction ``k_cl Gamma sum Yi^T (dx_i - U_i - Yi theta_hat)``.

    Evaluated entry by entry; the simulator uses the equivalent cached form
    :func:`cached_learning_term`.
    """
    return _learning_sum(stack, theta_hat, gains)


def dcl_term(stack: HistoryStack, theta_hat, gains: Gains) -> np.ndarray:
    """Derivative-based correction ``k_cl Gamma sum Y_i^T (xdot_i - u_i - Y_i theta_hat)``.

    Entries hold the pointwise regressor, the state-derivative estimate and
    the input in the ``script_Y``, ``delta_x`` and ``script_U`` slots.
    """
    return _learning_sum(stack, theta_hat, gains)


def cached_learning_term(stack: HistoryStack, theta_hat, gains: Gains) -> np.ndarray:
    return gains.k_cl * (gains.Gamma @ (stack.cross - stack.gram @ theta_hat))


def estimate_state_derivative(buffer: IntegrationBuffer, filter_window: float,
                              t_query: float) -> np.ndarray | None:
    """Central difference of the boxcar-filtered measured state at ``t_query``.

    The boxcar spans ``2M + 1`` samples with ``M = round(filter_window / 2h)``
    centred on the neighbours of ``t_query``; the difference of the two
    filtered values is divided by the difference of their filtered times, so
    linear signals are differentiated exactly even with jittered sampling.
    Returns None if the buffer does not hold ``t_query`` with enough samples on
    both sides.
    """
    if buffer.count == 0:
        return None
    h = buffer.step
    M = int(round(filter_window / (2 * h)))
    back = int(round((buffer.t_last - t_query) / h))
    if back < 0 or back >= buffer.count:
        return None
    q = buffer.index(back)
    if abs(buffer.t[q] - t_query) > 1e-6 * h:
        return None
    if back - M - 1 < 0 or back + M + 1 >= buffer.count:
        return None
    # the boxcars around t_query +- h share 2M - 1 samples; only their edges differ
    if M == 0:
        edge_hi, edge_lo = [buffer.index(back - 1)], [buffer.index(back + 1)]
    else:
        edge_hi = [buffer.index(back - 1 - M), buffer.index(back - M)]
        edge_lo = [buffer.index(back + M), buffer.index(back + 1 + M)]
    dx = buffer.x[edge_hi].sum(axis=0) - buffer.x[edge_lo].sum(axis=0)
    dt = buffer.t[edge_hi].sum() - buffer.t[edge_lo].sum()
    return dx / dt
