"""Closed-loop trials: plant + adaptive estimator integrated with fixed-step RK4."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from ._kernel import build_kernel
from .estimator import Gains, estimate_state_derivative, gradient_term
from .memory import HistoryStack, IntegrationBuffer, StackEntry, WindowIntegrals
from .model import PlantModel, DesiredTrajectory, lookup_model

METHODS = ("gradient", "integral_cl", "derivative_cl")
INTEGRATORS = ("lawson_rk4", "rk4")


@dataclass(frozen=True)
class TrialConfig:
    gains: Gains
    method: str = "integral_cl"
    model: str = "two_state"
    delta_t: float = 0.5
    noise_sigma: float = 0.0
    step_h: float = 0.0004
    duration: float = 100.0
    x0: tuple | None = None
    theta_hat0: tuple | None = None
    seed: int = 0
    lambda_bar: float = 1e-4
    stack_size: int = 20
    eps_rec: float = 0.01
    filter_window: float | None = None
    decimation: int = 25
    rms_window: tuple[float, float] = (60.0, 100.0)
    divergence_limit: float = 1e6
    zero_order_hold: bool = False
    integrator: str = "lawson_rk4"

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.step_h > 0:
            raise ValueError("step_h must be positive")
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if not self.duration > self.delta_t:
            raise ValueError("duration must exceed delta_t")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.decimation < 1 or self.stack_size < 1:
            raise ValueError("decimation and stack_size must be positive")
        if self.filter_window is not None and not self.filter_window > 0:
            raise ValueError("filter_window must be positive")

    @property
    def window(self) -> float:
        """Boxcar width of the derivative baseline's smoothing filter."""
        if self.filter_window is not None:
            return self.filter_window
        return min(0.5, self.delta_t)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step_h))

    def initial_state(self, model: PlantModel):
        x0 = np.zeros(model.n) if self.x0 is None else np.array(self.x0, dtype=float)
        th0 = np.zeros(model.m) if self.theta_hat0 is None else np.array(self.theta_hat0, dtype=float)
        if x0.shape != (model.n,) or th0.shape != (model.m,):
            raise ValueError("initial state dimensions do not match the model")
        return x0, th0


@dataclass(frozen=True)
class StabilityBounds:
    beta1: float
    beta2: float
    lambda1: float
    T_excite: float | None

    @classmethod
    def from_gains(cls, gains: Gains, lambda_bar: float, T_excite=None) -> "StabilityBounds":
        g = np.linalg.eigvalsh(gains.Gamma_inv)
        beta1 = 0.5 * min(1.0, g[0])
        beta2 = 0.5 * max(1.0, g[-1])
        k_min = np.linalg.eigvalsh(gains.K)[0]
        lambda1 = min(k_min, gains.k_cl * lambda_bar) / beta2
        return cls(beta1, beta2, lambda1, T_excite)


def exponential_envelope(t, bounds: StabilityBounds, eta0_norm: float):
    """Exponential bound on ``||[e; theta_tilde]||`` valid once excitation time is known."""
    if bounds.T_excite is None:
        raise ValueError("excitation time not reached; envelope not applicable")
    lam, T = bounds.lambda1, bounds.T_excite
    return (bounds.beta2 / bounds.beta1) * eta0_norm * np.exp(lam * (T - np.asarray(t, dtype=float)))


def lyapunov(e, theta_tilde, gains: Gains) -> float:
    e = np.asarray(e, dtype=float)
    tt = np.asarray(theta_tilde, dtype=float)
    return 0.5 * float(e @ e) + 0.5 * float(tt @ gains.Gamma_inv @ tt)


def add_measurement_noise(x_true, sigma: float, rng: np.random.Generator) -> np.ndarray:
    x_true = np.asarray(x_true, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x_true.copy()
    return x_true + sigma * rng.standard_normal(x_true.shape)


def rk4_step(f: Callable, y, t: float, h: float):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def learning_propagators(stack: HistoryStack | None, gains: Gains, h: float, exact: bool):
    """Write the learning term as ``f_c - A theta_hat``.

    Returns ``(f_c, A, E_half, E_full, q_half, q_full)`` where, if ``exact``,
    ``theta -> E theta + q`` is the exact flow of ``theta' = f_c - A theta``
    over ``h/2`` and ``h``; otherwise ``E = I`` and ``q = 0``.
    """
    m = gains.m
    if stack is None or not len(stack):
        A, f_c = np.zeros((m, m)), np.zeros(m)
    else:
        A = gains.k_cl * gains.Gamma @ stack.gram
        f_c = gains.k_cl * gains.Gamma @ stack.cross
    if not (exact and A.any()):
        return f_c, A, np.eye(m), np.eye(m), np.zeros(m), np.zeros(m)
    # augmented generator [[-A, f_c], [0, 0]] handles singular A
    L = np.zeros((m + 1, m + 1))
    L[:m, :m], L[:m, m] = -A, f_c
    half, full = expm(0.5 * h * L), expm(h * L)
    return f_c, A, half[:m, :m], full[:m, :m], half[:m, m], full[:m, m]


def step(state, t: float, h: float, config: TrialConfig, stack: HistoryStack | None = None,
         noise=None):
    """Advance the augmented state ``[x; theta_hat]`` by one step.

    Plain-numpy twin of the compiled kernel used by :func:`run_trial`. The
    measurement offset ``noise`` is held over the step. With the default
    ``lawson_rk4`` integrator the linear part of the learning term is
    propagated exactly and everything else by classical RK4; ``rk4`` applies
    classical RK4 to the whole right-hand side. ``config.zero_order_hold``
    freezes the input and learning term at their start-of-step values.
    """
    model, traj = lookup_model(config.model)
    g = config.gains
    n = model.n
    nu = np.zeros(n) if noise is None else np.asarray(noise, dtype=float)
    if config.method == "gradient":
        stack = None
    hold = config.zero_order_hold
    exact = config.integrator == "lawson_rk4" and not hold
    f_c, A, E_half, E_full, q_half, q_full = learning_propagators(stack, g, h, exact)
    y0 = np.asarray(state, dtype=float)
    x0, th0 = y0[:n], y0[n:]

    def inputs(xs, ths, ts):
        xm = xs + nu
        Ym = model.regressor(xm, ts)
        e = xm - traj.x_d(ts)
        u = traj.x_d_dot(ts) - Ym @ ths - g.K @ e
        return Ym, e, u

    u_hold = inputs(x0, th0, t)[2]
    if hold:
        forcing = f_c - A @ th0
    else:
        forcing = np.zeros(model.m) if exact else f_c

    def rhs(ts, xs, ths):
        Ym, e, u = inputs(xs, ths, ts)
        if hold:
            u = u_hold
        dx = model.regressor(xs, ts) @ model.true_theta + u
        dth = gradient_term(Ym, e, g) + forcing
        if not exact and not hold:
            dth = dth - A @ ths
        return dx, dth

    if not exact:
        def f(ts, y):
            return np.concatenate(rhs(ts, y[:n], y[n:]))
        return rk4_step(f, y0, t, h)
    dx1, dt1 = rhs(t, x0, th0)
    dx2, dt2 = rhs(t + h / 2, x0 + h / 2 * dx1, E_half @ (th0 + h / 2 * dt1) + q_half)
    dx3, dt3 = rhs(t + h / 2, x0 + h / 2 * dx2, E_half @ th0 + q_half + h / 2 * dt2)
    dx4, dt4 = rhs(t + h, x0 + h * dx3, E_full @ th0 + q_full + h * E_half @ dt3)
    x1 = x0 + h / 6 * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
    th1 = E_full @ th0 + q_full + h / 6 * (E_full @ dt1 + 2 * E_half @ (dt2 + dt3) + dt4)
    return np.concatenate([x1, th1])


@dataclass
class RecordEvent:
    """Passed to ``run_trial``'s ``on_record`` hook at each recording instant."""
    t: float
    k: int
    integrals: WindowIntegrals | None
    candidate: StackEntry | None
    accepted: bool
    theta_hat: np.ndarray
    x: np.ndarray
    stack: HistoryStack


@dataclass
class TrialResult:
    config: TrialConfig
    t: np.ndarray
    e: np.ndarray
    theta_tilde: np.ndarray
    lambda_min: np.ndarray
    V: np.ndarray
    envelope: np.ndarray
    T_excite: float | None
    bounds: StabilityBounds
    eta0_norm: float
    rms: np.ndarray | None
    diverged: bool = False
    diverged_time: float | None = None
    record_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    record_lambda: np.ndarray = field(default_factory=lambda: np.zeros(0))
    record_size: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    noise_head: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta_hat_final: np.ndarray | None = None

    @property
    def eta_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.e ** 2, axis=1) + np.sum(self.theta_tilde ** 2, axis=1))

    def columns(self) -> list[str]:
        n, m = self.e.shape[1], self.theta_tilde.shape[1]
        return (["t"] + [f"e{i + 1}" for i in range(n)]
                + [f"thetatilde{i + 1}" for i in range(m)] + ["lambda_min", "V", "envelope"])

    def to_csv(self, path):
        data = np.column_stack([self.t, self.e, self.theta_tilde, self.lambda_min,
                                self.V, self.envelope])
        write_csv(path, self.columns(), data)

    def record_log_csv(self, path):
        write_csv(path, ["t", "lambda_min", "stack_size"],
                  np.column_stack([self.record_t, self.record_lambda, self.record_size]))


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def rms_window(t, series, window) -> np.ndarray:
    """Per-channel root mean square over samples with ``t`` in ``[t_a, t_b]``."""
    t = np.asarray(t, dtype=float)
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    t_a, t_b = window
    tol = 1e-9 * max(1.0, abs(t_b))
    mask = (t >= t_a - tol) & (t <= t_b + tol)
    if not mask.any():
        raise ValueError(f"no samples in window [{t_a}, {t_b}]")
    return np.sqrt(np.mean(series[mask] ** 2, axis=0))


def _draw_noise(config: TrialConfig, n: int) -> np.ndarray:
    rng = np.random.default_rng(config.seed)
    shape = (config.n_steps + 1, n)
    if config.noise_sigma == 0:
        return np.zeros(shape)
    return config.noise_sigma * rng.standard_normal(shape)


def run_trial(config: TrialConfig, on_record: Callable[[RecordEvent], None] | None = None,
              ) -> TrialResult:
    model, traj = lookup_model(config.model)
    g = config.gains
    if g.n != model.n or g.m != model.m:
        raise ValueError("gain dimensions do not match the model")
    n, m, h = model.n, model.m, config.step_h
    measure, advance = build_kernel(model.regressor, traj.x_d, traj.x_d_dot)

    n_steps = config.n_steps
    noise = _draw_noise(config, n)
    noisy = config.noise_sigma > 0
    x, th = config.initial_state(model)
    th0 = th.copy()
    theta = np.array(model.true_theta)

    buf = IntegrationBuffer(n, m, config.delta_t, h)
    stack = HistoryStack(config.stack_size, m, n, config.eps_rec)
    learning = config.method != "gradient"

    xm, Ym, um = measure(x, th, 0.0, noise[0], g.K)
    buf.t[0], buf.x[0], buf.Y[0], buf.u[0] = 0.0, xm, Ym, um
    buf.head, buf.count, buf.t_first, buf.x_first = 1, 1, 0.0, xm.copy()

    dec = config.decimation
    n_log = n_steps // dec + 1
    log_t = np.zeros(n_log)
    log_e = np.zeros((n_log, n))
    log_tt = np.zeros((n_log, m))
    log_V = np.zeros(n_log)
    log_lam = np.zeros(n_log)
    e0 = x - traj.x_d(0.0)
    log_e[0], log_tt[0] = e0, theta - th
    log_V[0] = lyapunov(e0, theta - th, g)
    log_i = 1

    stride = max(1, int(round(config.delta_t / (2 * h))))
    first = int(math.floor(config.delta_t / h + 1e-9)) + 1
    next_rec = max(stride, -(-first // stride) * stride) if learning else n_steps + 1

    M = int(round(config.window / (2 * h)))
    rec_t, rec_lam, rec_size = [], [], []
    T_excite = None
    lam = 0.0
    exact = config.integrator == "lawson_rk4" and not config.zero_order_hold
    props = learning_propagators(None, g, h, exact)
    diverged_k = -1
    k = 0
    while k < n_steps:
        k_end = min(n_steps, next_rec)
        head, log_i, diverged_k = advance(
            k, k_end, h, x, th, theta, g.K, g.Gamma, g.Gamma_inv, *props, exact, noise, noisy, config.zero_order_hold, buf.t, buf.x, buf.Y, buf.u,
            buf.int_Y, buf.int_u, buf.head, dec, log_i, log_t, log_e, log_tt, log_V,
            log_lam, lam, config.divergence_limit)
        buf.count = min(buf.capacity, buf.count + (k_end - k if diverged_k < 0 else diverged_k - k - 1))
        buf.head = head
        if diverged_k >= 0:
            break
        k = k_end
        if k != next_rec:
            continue
        next_rec += stride
        t_now = k * h
        candidate, wi = None, None
        if config.method == "integral_cl":
            wi = buf.window_integrals()
            if wi is not None:
                candidate = StackEntry(t_now, wi.script_Y, wi.x_now - wi.x_lag, wi.script_U)
        else:
            t_q = (k - M - 1) * h
            xdot = estimate_state_derivative(buf, config.window, t_q)
            if xdot is not None:
                q = buf.index(M + 1)
                candidate = StackEntry(t_q, buf.Y[q].copy(), xdot, buf.u[q].copy())
        accepted = stack.try_record(candidate) if candidate is not None else False
        if accepted:
            props = learning_propagators(stack, g, h, exact)
        lam = stack.lambda_min
        if log_i > 0 and k % dec == 0:
            # the sample logged at this instant should show the post-record value
            log_lam[log_i - 1] = lam
        rec_t.append(t_now)
        rec_lam.append(lam)
        rec_size.append(len(stack))
        if T_excite is None and lam >= config.lambda_bar:
            T_excite = t_now
        if on_record is not None:
            on_record(RecordEvent(t_now, k, wi, candidate, accepted, th.copy(), x.copy(), stack))

    log_t, log_e, log_tt = log_t[:log_i], log_e[:log_i], log_tt[:log_i]
    log_V, log_lam = log_V[:log_i], log_lam[:log_i]
    bounds = StabilityBounds.from_gains(g, config.lambda_bar, T_excite)
    eta0 = float(np.sqrt(e0 @ e0 + (theta - th0) @ (theta - th0)))
    envelope = (exponential_envelope(log_t, bounds, eta0) if T_excite is not None
                else np.full(log_i, np.nan))
    diverged = diverged_k >= 0
    rms = None
    if not diverged and log_t[-1] >= config.rms_window[1] - 1e-9:
        rms = rms_window(log_t, np.column_stack([log_e, log_tt]), config.rms_window)
    return TrialResult(
        config=config, t=log_t, e=log_e, theta_tilde=log_tt, lambda_min=log_lam, V=log_V,
        envelope=envelope, T_excite=T_excite, bounds=bounds, eta0_norm=eta0, rms=rms,
        diverged=diverged, diverged_time=diverged_k * h if diverged else None,
        record_t=np.array(rec_t), record_lambda=np.array(rec_lam),
        record_size=np.array(rec_size, dtype=int), noise_head=noise.reshape(-1)[:3].copy(),
        theta_hat_final=th.copy(),
    )
