"""Plant models, fixed-step RK4 integration and the sampled flow map.

Right-hand sides are vectorised over leading batch axes: ``rhs(y, u)`` accepts
``y`` of shape ``(..., n_y)`` and ``u`` of shape ``(..., n_u)``.  Delay systems
additionally receive the delayed state ``y(t - tau)`` as a third argument.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .errors import IntegrationDiverged, InvalidParam, UnknownSystem


@dataclass(frozen=True)
class SystemModel:
    name: str
    rhs: Callable
    n_y: int
    n_u: int
    delay: Optional[float] = None
    params: Mapping = field(default_factory=dict)
    default_y0: Optional[np.ndarray] = None

    def __call__(self, y, u, y_delayed=None):
        if self.delay is None:
            return self.rhs(y, u)
        if y_delayed is None:
            y_delayed = y
        return self.rhs(y, u, y_delayed)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParam(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise InvalidParam(f"steps must be nonnegative, got {self.steps}")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)


class DelayHistory:
    """Piecewise-linear record of past states for delay systems.

    Nodes older than ``span`` before the newest node are discarded lazily.
    """

    def __init__(self, times, states, span):
        times = [float(t) for t in times]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidParam("history times must be strictly increasing")
        if times[-1] - times[0] < span - 1e-12:
            raise InvalidParam("history does not cover the delay span")
        self.span = float(span)
        self._t = times
        self._y = [np.array(s, dtype=float) for s in states]

    @classmethod
    def constant(cls, y0, t0, tau):
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        return cls([t0 - tau, t0], [y0, y0], tau)

    @property
    def t_end(self):
        return self._t[-1]

    def copy(self):
        new = DelayHistory.__new__(DelayHistory)
        new.span = self.span
        new._t = list(self._t)
        new._y = list(self._y)
        return new

    def append(self, t, y):
        if t <= self._t[-1]:
            raise InvalidParam("history times must be strictly increasing")
        self._t.append(float(t))
        self._y.append(np.array(y, dtype=float))
        # keep a little slack so queries at t_end - span always find a left node
        cut = bisect.bisect_right(self._t, self._t[-1] - self.span) - 2
        if cut > 64:
            del self._t[:cut]
            del self._y[:cut]

    def __call__(self, t):
        ts = self._t
        if t <= ts[0]:
            return self._y[0].copy()
        if t >= ts[-1]:
            return self._y[-1].copy()
        k = bisect.bisect_right(ts, t)
        t0, t1 = ts[k - 1], ts[k]
        if t == t0:
            return self._y[k - 1].copy()
        w = (t - t0) / (t1 - t0)
        return (1.0 - w) * self._y[k - 1] + w * self._y[k]


def rk4_step(system, y, u, dt, history=None):
    """One classical RK4 step with the control held constant.

    For delay systems the current time is ``history.t_end`` and delayed
    values are read from the history by linear interpolation.
    """
    if not dt > 0:
        raise InvalidParam(f"dt must be positive, got {dt}")
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    if system.delay is None:
        f = system.rhs
        k1 = f(y, u)
        k2 = f(y + 0.5 * dt * k1, u)
        k3 = f(y + 0.5 * dt * k2, u)
        k4 = f(y + dt * k3, u)
    else:
        if history is None:
            raise InvalidParam(f"system {system.name!r} needs a DelayHistory")
        if dt > system.delay:
            raise InvalidParam("step size must not exceed the delay")
        t = history.t_end
        tau = system.delay
        f = system.rhs
        d0 = history(t - tau)
        dh = history(t + 0.5 * dt - tau)
        d1 = history(t + dt - tau)
        k1 = f(y, u, d0)
        k2 = f(y + 0.5 * dt * k1, u, dh)
        k3 = f(y + 0.5 * dt * k2, u, dh)
        k4 = f(y + dt * k3, u, d1)
    y_new = y + dt / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
    if not np.all(np.isfinite(y_new)):
        raise IntegrationDiverged(0)
    return y_new


def flow_map(system, y0, controls, grid, substeps=1, history=None):
    """Apply one control per coarse interval of ``grid``; return y_1..y_p.

    ``history`` (delay systems only) is advanced in place; pass a copy to keep
    the original.  If omitted, a constant history equal to ``y0`` is used.
    """
    if substeps < 1:
        raise InvalidParam("substeps must be a positive integer")
    controls = np.asarray(controls, dtype=float).reshape(len(controls), -1) \
        if len(controls) else np.zeros((0, system.n_u))
    if len(controls) != grid.steps:
        raise InvalidParam(f"expected {grid.steps} controls, got {len(controls)}")
    y = np.array(y0, dtype=float)
    out = np.empty((grid.steps,) + y.shape)
    h = grid.dt / substeps
    if system.delay is None:
        return _flow_plain(system.rhs, y, controls, h, substeps, out)
    if history is None:
        history = DelayHistory.constant(y, grid.t0, system.delay)
    for i in range(grid.steps):
        u = controls[i]
        for s in range(substeps):
            try:
                y = rk4_step(system, y, u, h, history)
            except IntegrationDiverged:
                raise IntegrationDiverged(i) from None
            if history is not None:
                history.append(grid.t0 + i * grid.dt + (s + 1) * h, y)
        out[i] = y
    return out


def _flow_plain(f, y, controls, h, substeps, out):
    h2, h6 = 0.5 * h, h / 6.0
    for i, u in enumerate(controls):
        for _ in range(substeps):
            k1 = f(y, u)
            k2 = f(y + h2 * k1, u)
            k3 = f(y + h2 * k2, u)
            k4 = f(y + h * k3, u)
            y = y + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationDiverged(i)
        out[i] = y
    return out


def integrate_batch(system, y, u, dt, substeps):
    """Advance a batch of states (no delay) by ``dt`` with fixed controls."""
    h = dt / substeps
    f = system.rhs
    for _ in range(substeps):
        k1 = f(y, u)
        k2 = f(y + 0.5 * h * k1, u)
        k3 = f(y + 0.5 * h * k2, u)
        k4 = f(y + h * k3, u)
        y = y + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
    return y


# --- built-in plants -------------------------------------------------------

def _duffing(alpha=-1.0, beta=1.0, delta=0.0, eps=0.0):
    def rhs(y, u):
        y1, y2 = y[..., 0], y[..., 1]
        dy2 = -delta * y2 - alpha * y1 - beta * y1 ** 3 + eps + u[..., 0]
        return np.stack([y2, dy2], axis=-1)
    return rhs, 2, 1, None, np.array([0.5, 0.0])


def _lorenz_affine(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    def rhs(y, u):
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        return np.stack([sigma * (y2 - y1),
                         y1 * (rho - y3) - y2 + u[..., 0],
                         y1 * y2 - beta * y3], axis=-1)
    return rhs, 3, 1, None, np.array([1.0, 1.0, 1.0])


def _lorenz_cos(sigma=10.0, rho=28.0, beta=8.0 / 3.0, gain=50.0):
    def rhs(y, u):
        y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
        return np.stack([sigma * (y2 - y1),
                         y1 * (rho - y3) - y2 + gain * np.cos(u[..., 0]),
                         y1 * y2 - beta * y3], axis=-1)
    return rhs, 3, 1, None, np.array([1.0, 1.0, 1.0])


def _mackey_glass(beta=2.0, gamma=1.0, eta=9.65, tau=2.0):
    if not tau > 0:
        raise InvalidParam("tau must be positive")

    def rhs(y, u, yd):
        # |y|^eta keeps the power real if a state dips below zero
        return beta * yd / (1.0 + np.abs(yd) ** eta) - gamma * y + u
    return rhs, 1, 1, float(tau), np.array([0.5])


def burgers_grid(L=1.0, nx=100):
    dx = L / (nx + 1)
    return dx * np.arange(1, nx + 1), dx


def burgers_actuators(x, L=1.0, n_act=5):
    """Indicator functions of the disjoint actuator supports, shape (n_x, n_act)."""
    j = np.arange(1, n_act + 1)
    lo = (j - 1) * L / n_act
    hi = j * L / n_act
    return ((x[:, None] > lo) & (x[:, None] <= hi)).astype(float)


def _burgers1d(Re=100.0, L=1.0, nx=100, n_act=5):
    nx = int(nx)
    if nx < 3 or Re <= 0 or L <= 0:
        raise InvalidParam("burgers1d needs nx >= 3, Re > 0, L > 0")
    x, dx = burgers_grid(L, nx)
    chi = burgers_actuators(x, L, n_act)
    nu = 1.0 / Re

    def rhs(y, u):
        pad = np.zeros(y.shape[:-1] + (1,))
        yp = np.concatenate([pad, y, pad], axis=-1)
        lap = (yp[..., 2:] - 2.0 * y + yp[..., :-2]) / dx ** 2
        grad = (yp[..., 2:] - yp[..., :-2]) / (2.0 * dx)
        return nu * lap - y * grad + u @ chi.T
    y0 = np.where(x <= L / 2, 1.0, 0.0)
    return rhs, nx, n_act, None, y0


def _linear(A=((-1.0,),), B=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.zeros((n, 1)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != (n, n) or B.shape[0] != n:
        raise InvalidParam("linear system needs square A and B with matching rows")

    def rhs(y, u):
        return y @ A.T + u @ B.T
    return rhs, n, B.shape[1], None, np.ones(n)


_BUILTINS = {
    "duffing": _duffing,
    "lorenz_affine": _lorenz_affine,
    "lorenz_cos": _lorenz_cos,
    "mackey_glass": _mackey_glass,
    "burgers1d": _burgers1d,
    "linear": _linear,
}


def builtin_system(name, params=None):
    """Construct one of the shipped plants; unspecified params take defaults."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownSystem(f"unknown system {name!r}; known: {sorted(_BUILTINS)}") from None
    params = dict(params or {})
    try:
        rhs, n_y, n_u, delay, y0 = factory(**params)
    except TypeError as exc:
        raise InvalidParam(f"{name}: {exc}") from None
    return SystemModel(name=name, rhs=rhs, n_y=n_y, n_u=n_u, delay=delay,
                       params=params, default_y0=y0)


def perturbed(system, offset):
    """Plant with a constant additive term in the right-hand side."""
    offset = np.asarray(offset, dtype=float)
    if offset.shape != (system.n_y,):
        raise InvalidParam(f"offset must have shape ({system.n_y},)")
    base = system.rhs
    if system.delay is None:
        def rhs(y, u):
            return base(y, u) + offset
    else:
        def rhs(y, u, yd):
            return base(y, u, yd) + offset
    return SystemModel(name=f"{system.name}+offset", rhs=rhs, n_y=system.n_y,
                       n_u=system.n_u, delay=system.delay,
                       params={**system.params, "offset": offset.tolist()},
                       default_y0=system.default_y0)
