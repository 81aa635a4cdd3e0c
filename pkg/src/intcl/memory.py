"""Recorded-data side of concurrent learning.

``IntegrationBuffer`` keeps the last ``span`` seconds of measured samples and
their running integrals; ``HistoryStack`` keeps the N recorded data points
whose gram matrix drives the learning term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class OrderingError(ValueError):
    """A sample was pushed with a time not after the latest stored one."""


@dataclass(frozen=True)
class WindowSample:
    t: float
    x_meas: np.ndarray
    Y: np.ndarray
    u: np.ndarray


@dataclass(frozen=True)
class WindowIntegrals:
    script_Y: np.ndarray
    script_U: np.ndarray
    x_now: np.ndarray
    x_lag: np.ndarray

    def __iter__(self):
        return iter((self.script_Y, self.script_U, self.x_now, self.x_lag))


class IntegrationBuffer:
    """Fixed-capacity ring of samples over the trailing integration window.

    Besides the raw samples, each slot carries the running integral of ``Y``
    and ``u`` from the first sample up to that slot's time. Window integrals
    are differences of these prefix sums. When samples arrive through
    :meth:`push_sample` without explicit increments the prefix sums follow the
    trapezoidal rule; the simulator instead supplies the increments of its own
    Runge-Kutta stages.
    """

    def __init__(self, n: int, m: int, span: float, step: float, slack: int = 4):
        if span <= 0 or step <= 0:
            raise ValueError("span and step must be positive")
        self.n, self.m = n, m
        self.span = float(span)
        self.step = float(step)
        self.capacity = int(math.ceil(span / step - 1e-9)) + slack
        cap = self.capacity
        self.t = np.zeros(cap)
        self.x = np.zeros((cap, n))
        self.Y = np.zeros((cap, n, m))
        self.u = np.zeros((cap, n))
        self.int_Y = np.zeros((cap, n, m))
        self.int_u = np.zeros((cap, n))
        self.head = 0  # next slot to write
        self.count = 0
        self.t_first = None
        self.x_first = None

    def __len__(self):
        return self.count

    @property
    def latest(self) -> int:
        return (self.head - 1) % self.capacity

    @property
    def t_last(self) -> float:
        if self.count == 0:
            raise IndexError("empty buffer")
        return float(self.t[self.latest])

    def push_sample(self, sample: WindowSample, increments=None) -> "IntegrationBuffer":
        """Append ``sample``; the oldest slot is overwritten once full.

        ``increments`` is an optional ``(dY, du)`` pair giving the integrals of
        ``Y`` and ``u`` since the previous sample.
        """
        t = float(sample.t)
        if self.count and not t > self.t_last:
            raise OrderingError(f"sample time {t} does not follow {self.t_last}")
        x = np.asarray(sample.x_meas, dtype=float).reshape(self.n)
        Y = np.asarray(sample.Y, dtype=float).reshape(self.n, self.m)
        u = np.asarray(sample.u, dtype=float).reshape(self.n)
        i, prev = self.head, self.latest
        if self.count == 0:
            self.t_first, self.x_first = t, x.copy()
            self.int_Y[i] = 0.0
            self.int_u[i] = 0.0
        else:
            if increments is None:
                dt = t - self.t[prev]
                dY = 0.5 * dt * (self.Y[prev] + Y)
                du = 0.5 * dt * (self.u[prev] + u)
            else:
                dY, du = increments
            self.int_Y[i] = self.int_Y[prev] + dY
            self.int_u[i] = self.int_u[prev] + du
        self.t[i], self.x[i], self.Y[i], self.u[i] = t, x, Y, u
        self.head = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        return self

    def index(self, back: int) -> int:
        """Slot of the sample ``back`` positions before the latest one."""
        if not 0 <= back < self.count:
            raise IndexError(back)
        return (self.head - 1 - back) % self.capacity

    def ordered(self):
        """Times, states, regressors and inputs, oldest first (copies)."""
        idx = (self.head - self.count + np.arange(self.count)) % self.capacity
        return self.t[idx], self.x[idx], self.Y[idx], self.u[idx]

    def _locate(self, s: float):
        """Return ``(slot_lo, slot_hi, w)`` with ``s = t_lo + w (t_hi - t_lo)``, or None."""
        tol = 1e-9 * self.step
        lo, hi = 0, self.count - 1  # positions back from latest: hi is oldest
        if self.t[self.index(hi)] > s + tol:
            return None
        # binary search over positions counted backwards
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self.t[self.index(mid)] > s + tol:
                lo = mid
            else:
                hi = mid
        j_old, j_new = self.index(hi), self.index(lo)
        t_old = self.t[j_old]
        if abs(t_old - s) <= tol:
            return j_old, j_old, 0.0
        return j_old, j_new, (s - t_old) / (self.t[j_new] - t_old)

    def window_integrals(self, t_now: float | None = None) -> WindowIntegrals | None:
        """Integrals of ``Y`` and ``u`` over ``[t_now - span, t_now]``.

        Zero (exactly) while ``t_now`` is within ``span`` of the first sample.
        Returns None when the stored samples do not reach back to the window
        start.
        """
        if self.count == 0:
            raise IndexError("empty buffer")
        j = self.latest
        if t_now is not None and abs(t_now - self.t[j]) > 1e-9 * self.step:
            raise ValueError(f"t_now={t_now} is not the latest sample time {self.t[j]}")
        t_now = float(self.t[j])
        if t_now <= self.t_first + self.span + 1e-9 * self.step:
            return WindowIntegrals(np.zeros((self.n, self.m)), np.zeros(self.n),
                                   self.x[j].copy(), self.x_first.copy())
        loc = self._locate(t_now - self.span)
        if loc is None:
            return None
        a, b, w = loc
        if w == 0.0:
            lag_Y, lag_u, x_lag = self.int_Y[a], self.int_u[a], self.x[a].copy()
        else:
            # trapezoid from t_a to s, with Y(s) and u(s) interpolated linearly
            c = 0.5 * w * (self.t[b] - self.t[a])
            lag_Y = self.int_Y[a] + c * ((2 - w) * self.Y[a] + w * self.Y[b])
            lag_u = self.int_u[a] + c * ((2 - w) * self.u[a] + w * self.u[b])
            x_lag = (1 - w) * self.x[a] + w * self.x[b]
        return WindowIntegrals(self.int_Y[j] - lag_Y, self.int_u[j] - lag_u,
                               self.x[j].copy(), x_lag)


def window_integrals(buffer: IntegrationBuffer, t_now: float | None = None):
    return buffer.window_integrals(t_now)


@dataclass(frozen=True)
class StackEntry:
    """One recorded data point.

    For integral learning: window integrals ``script_Y``, ``script_U`` and the
    state change ``delta_x`` over the window ending at ``t_i``. The derivative
    baseline stores the pointwise ``Y``, the state-derivative estimate and
    ``u`` in the same three slots.
    """
    t_i: float
    script_Y: np.ndarray
    delta_x: np.ndarray
    script_U: np.ndarray

    @property
    def target(self) -> np.ndarray:
        return self.delta_x - self.script_U


class HistoryStack:
    """Up to ``capacity`` entries with cached ``sum A_i^T A_i`` and ``sum A_i^T b_i``.

    Recording policy: append while not full; afterwards a candidate replaces
    whichever entry leaves the largest minimum eigenvalue of the gram, provided
    that beats the current value by the relative margin ``eps_rec``.
    """

    def __init__(self, capacity: int, m: int, n: int, eps_rec: float = 0.01):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity, self.m, self.n = capacity, m, n
        self.eps_rec = eps_rec
        self.entries: list[StackEntry] = []
        self._A = np.zeros((capacity, n, m))
        self._b = np.zeros((capacity, n))
        self.gram = np.zeros((m, m))
        self.cross = np.zeros(m)
        self.lambda_min = 0.0

    def __len__(self):
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) == self.capacity

    def _refresh(self):
        k = len(self.entries)
        A, b = self._A[:k], self._b[:k]
        self.gram = np.einsum("kij,kil->jl", A, A)
        self.cross = np.einsum("kij,ki->j", A, b)

    def try_record(self, candidate: StackEntry) -> bool:
        A = np.asarray(candidate.script_Y, dtype=float).reshape(self.n, self.m)
        b = np.asarray(candidate.target, dtype=float).reshape(self.n)
        AtA = A.T @ A
        if not self.full:
            k = len(self.entries)
            self.entries.append(candidate)
            self._A[k], self._b[k] = A, b
            self._refresh()
            # adding a PSD term cannot lower the minimum eigenvalue; don't let
            # roundoff in the eigensolver say otherwise
            self.lambda_min = max(self.lambda_min, _min_eig(self.gram))
            return True
        old = np.einsum("kij,kil->kjl", self._A, self._A)
        trial = self.gram[None] - old + AtA[None]
        trial = 0.5 * (trial + trial.transpose(0, 2, 1))
        lam = np.linalg.eigvalsh(trial)[:, 0]
        j = int(np.argmax(lam))
        best = max(float(lam[j]), 0.0)
        floor = 1e-12 * (1.0 + np.trace(self.gram))
        if best > self.lambda_min * (1 + self.eps_rec) and best - self.lambda_min > floor:
            self.entries[j] = candidate
            self._A[j], self._b[j] = A, b
            self._refresh()
            self.lambda_min = best
            return True
        return False

    def brute_gram(self) -> np.ndarray:
        g = np.zeros((self.m, self.m))
        for e in self.entries:
            Y = np.asarray(e.script_Y, dtype=float)
            g += Y.T @ Y
        return g


def _min_eig(G) -> float:
    if not G.size:
        return 0.0
    return max(float(np.linalg.eigvalsh(0.5 * (G + G.T))[0]), 0.0)


def try_record(stack: HistoryStack, candidate: StackEntry) -> tuple[HistoryStack, bool]:
    accepted = stack.try_record(candidate)
    return stack, accepted


def excitation_metric(stack: HistoryStack) -> float:
    """Minimum eigenvalue of the stack gram (0 when empty)."""
    if not stack.entries:
        return 0.0
    return _min_eig(stack.gram)
