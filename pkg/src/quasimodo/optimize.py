"""Relaxed tracking objective and a projected-gradient solver on products of simplices."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParam, MaxItersReached
from .surrogates.base import relaxed_rollout

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectiveSpec:
    """Stage cost ``(z - z_ref(t))^T Q (z - z_ref(t))`` summed over the horizon."""
    Q: np.ndarray
    reference: Callable
    dt: float

    def __init__(self, Q, reference, dt):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise InvalidParam("Q must be square")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise InvalidParam("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-10:
            raise InvalidParam("Q must be positive semidefinite")
        if not dt > 0:
            raise InvalidParam("dt must be positive")
        if not callable(reference):
            ref = np.atleast_1d(np.asarray(reference, dtype=float))
            reference = lambda t, _r=ref: _r  # noqa: E731
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "dt", float(dt))

    @property
    def q(self):
        return self.Q.shape[0]

    def references(self, t0, p):
        """Reference values at t0 + dt, ..., t0 + p dt as a (p, q) array."""
        return np.array([np.broadcast_to(np.asarray(self.reference(t0 + (i + 1) * self.dt),
                                                    dtype=float), (self.q,))
                         for i in range(p)])


def stage_costs(Zs, refs, Q):
    """``Zs`` (..., p, q) against ``refs`` (p, q): summed quadratic cost per leading index."""
    e = Zs - refs
    return np.sum((e @ Q) * e, axis=(-2, -1))


def batch_objective(ensemble, z0, plans, spec, t0=0.0, state=None, refs=None):
    plans = np.asarray(plans, dtype=float)
    if plans.shape[1] < 1:
        raise InvalidParam("plan must have at least one row")
    if refs is None:
        refs = spec.references(t0, plans.shape[1])
    Zs = relaxed_rollout(ensemble, plans, z0, state)
    return stage_costs(Zs, refs, spec.Q)


def evaluate_objective(ensemble, z0, plan, spec, t0=0.0, state=None):
    plan = np.atleast_2d(np.asarray(plan, dtype=float))
    return float(batch_objective(ensemble, z0, plan[None], spec, t0, state)[0])


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    m = V.shape[1]
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, m + 1)
    cond = u - css / k > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(V)), rho] / (rho + 1)
    out = np.maximum(V - theta[:, None], 0.0)
    return out[0] if single else out


def fd_gradient(objective, plan, h=1e-6, batched=None):
    """Central-difference gradient of ``objective`` at ``plan`` (p, m).

    With ``batched`` (a function of a (B, p, m) stack) all 2pm evaluations are
    done in one call.
    """
    if not h > 0:
        raise InvalidParam("h must be positive")
    plan = np.asarray(plan, dtype=float)
    p, m = plan.shape
    n = p * m
    E = np.eye(n).reshape(n, p, m) * h
    if batched is not None:
        vals = batched(np.concatenate([plan + E, plan - E]))
        fp, fm = vals[:n], vals[n:]
    else:
        fp = np.array([objective(plan + e) for e in E])
        fm = np.array([objective(plan - e) for e in E])
    return ((fp - fm) / (2.0 * h)).reshape(p, m)


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 200
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    fd_step: float = 1e-6
    tol: float = 1e-6
    max_backtracks: int = 40
    step_growth: float = 2.0
    ftol: float = 1e-10
    fatol: float = 1e-9

    def __post_init__(self):
        if self.max_iters < 0 or self.max_backtracks < 1:
            raise InvalidParam("iteration limits must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack < 1):
            raise InvalidParam("Armijo parameters must lie in (0, 1)")
        if not (self.initial_step > 0 and self.fd_step > 0 and self.tol > 0
                and self.step_growth >= 1):
            raise InvalidParam("step sizes and tolerance must be positive")
        if self.ftol < 0 or self.fatol < 0:
            raise InvalidParam("objective tolerances must be nonnegative")


@dataclass
class SolveResult:
    plan: np.ndarray
    J: float
    iters: int
    converged: bool
    J_start: float

    def __iter__(self):
        return iter((self.plan, self.J, self.iters))


def uniform_plan(p, m):
    return np.full((p, m), 1.0 / m)


def solve_relaxed(ensemble, z0, p, spec, config=None, t0=0.0, warm_start=None, state=None):
    """Minimise the relaxed horizon cost over ``p`` simplex rows.

    Projected gradient descent with finite-difference gradients and an Armijo
    line search along the projection arc.  All trial steps of one line search
    are evaluated in a single batched rollout.
    """
    cfg = config or SolverConfig()
    m = ensemble.m
    x = uniform_plan(p, m) if warm_start is None else project_simplex(
        np.asarray(warm_start, dtype=float).reshape(p, m))
    refs = spec.references(t0, p)

    def fbatch(plans):
        return batch_objective(ensemble, z0, plans, spec, t0, state, refs)

    J = float(fbatch(x[None])[0])
    J0 = J
    if J <= cfg.fatol:
        return SolveResult(x, J, 0, True, J0)
    step = cfg.initial_step
    shrink = cfg.backtrack ** np.arange(cfg.max_backtracks)
    x_old = g_old = None
    for it in range(cfg.max_iters):
        g = fd_gradient(None, x, cfg.fd_step, fbatch)
        if x_old is not None:
            # Barzilai-Borwein guess for the first trial step
            dx, dg = (x - x_old).ravel(), (g - g_old).ravel()
            curv = dx @ dg
            if curv > 0:
                step = max(step, (dx @ dx) / curv)
        x_old, g_old = x, g
        if np.max(np.abs(x - project_simplex(x - g))) < cfg.tol:
            return SolveResult(x, J, it, True, J0)
        steps = step * shrink
        trials = project_simplex((x[None] - steps[:, None, None] * g[None]).reshape(-1, m))
        trials = trials.reshape(len(steps), p, m)
        vals = fbatch(trials)
        decrease = np.einsum("pm,bpm->b", g, trials - x[None])
        ok = np.flatnonzero(vals <= J + cfg.armijo_c * decrease)
        ok = ok[vals[ok] < J] if len(ok) else ok
        if len(ok) == 0:
            # no descent along the projection arc at resolution step * backtrack**k
            log.debug("line search stalled at iteration %d (J=%g)", it, J)
            return SolveResult(x, J, it, True, J0)
        # every trial is already evaluated, so take the best admissible one
        k = ok[np.argmin(vals[ok])]
        J_prev = J
        x, J = trials[k], float(vals[k])
        step = steps[k] * cfg.step_growth
        # stop once an iteration no longer changes the cost noticeably
        if J <= cfg.fatol or J_prev - J <= cfg.ftol * J_prev:
            return SolveResult(x, J, it + 1, True, J0)
    warnings.warn(f"solver stopped after {cfg.max_iters} iterations (J={J:.6g})",
                  MaxItersReached, stacklevel=2)
    return SolveResult(x, J, cfg.max_iters, False, J0)
