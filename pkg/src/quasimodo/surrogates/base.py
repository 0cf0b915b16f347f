"""Rollouts over an ensemble of per-control one-step predictors.

An ensemble exposes ``m``, ``q`` and ``step(Z, W, state) -> (Z_next, state)``
where ``Z`` is a batch of observables ``(B, q)`` and ``W`` the matching batch of
weights ``(B, m)``.  The relaxed image is ``sum_j W[:, j] * Phi_j(Z)``.  ``state``
carries whatever a backend needs between steps (``None`` for memoryless
models) and is never mutated in place.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidParam


def one_hot(indices, m):
    indices = np.asarray(indices, dtype=int).reshape(-1)
    out = np.zeros((len(indices), m))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def broadcast_state(state, batch):
    """Tile an unbatched state to ``batch`` rows (arrays only; ``None`` passes through)."""
    if state is None:
        return None
    state = np.asarray(state, dtype=float)
    if state.ndim == 1:
        return np.broadcast_to(state, (batch, state.size)).copy()
    return state


def relaxed_rollout(ensemble, plans, z0, state=None):
    """Roll a batch of plans ``(B, p, m)`` forward from one ``z0``; returns ``(B, p, q)``."""
    plans = np.asarray(plans, dtype=float)
    if plans.ndim != 3 or plans.shape[2] != ensemble.m:
        raise InvalidParam(f"plans must have shape (B, p, {ensemble.m})")
    B, p, _ = plans.shape
    z = np.broadcast_to(np.asarray(z0, dtype=float).reshape(-1), (B, ensemble.q)).copy()
    st = broadcast_state(state, B)
    out = np.empty((B, p, ensemble.q))
    for i in range(p):
        z, st = ensemble.step(z, plans[:, i, :], st)
        out[:, i, :] = z
    return out


def multi_step_predict(ensemble, sequence, z0, p=None, state=None):
    """Roll out from ``z0`` under control indices or simplex rows.

    ``sequence`` is either ``p`` integer indices or a ``(p, m)`` array of
    weights; returns the ``p`` predicted observables.
    """
    seq = np.asarray(sequence)
    if seq.ndim == 1 and (seq.size == 0 or np.issubdtype(seq.dtype, np.integer)):
        rows = one_hot(seq, ensemble.m)
    else:
        rows = np.atleast_2d(seq.astype(float))
    if p is not None:
        rows = rows[:p]
    if len(rows) == 0:
        return np.zeros((0, ensemble.q))
    return relaxed_rollout(ensemble, rows[None], z0, state)[0]


def weighted_images(images, W):
    """``images`` (B, m, q) and weights (B, m) -> (B, q)."""
    return np.einsum("bm,bmq->bq", W, images)


class OdeEnsemble:
    """Surrogate given by the time-T-maps of an ODE, one per control point.

    With ``basis`` set, the dynamics are Galerkin-projected onto its columns
    (``z`` are then reduced coordinates).
    """

    kind = "ode"

    def __init__(self, system, points, dt, substeps=1, basis=None):
        if system.delay is not None:
            raise InvalidParam("delay systems cannot be used as ODE surrogates")
        self.system = system
        self.points = np.asarray(points, dtype=float).reshape(len(points), -1)
        self.dt = float(dt)
        self.substeps = int(substeps)
        self.basis = None if basis is None else np.asarray(basis, dtype=float)

    @property
    def m(self):
        return len(self.points)

    @property
    def reduced_dim(self):
        return self.system.n_y if self.basis is None else self.basis.shape[1]

    @property
    def q(self):
        return self.reduced_dim

    def reduced_rhs(self, z, u):
        if self.basis is None:
            return self.system.rhs(z, u)
        return self.system.rhs(z @ self.basis.T, u) @ self.basis

    def images(self, Z, active=None):
        """All one-step images ``(B, m, q)``; columns outside ``active`` are left zero."""
        Z = np.asarray(Z, dtype=float)
        B = len(Z)
        cols = np.arange(self.m) if active is None else np.flatnonzero(active)
        out = np.zeros((B, self.m, self.reduced_dim))
        if len(cols) == 0:
            return out
        zz = np.repeat(Z[:, None, :], len(cols), axis=1)
        uu = np.broadcast_to(self.points[cols], (B, len(cols), self.points.shape[1]))
        h = self.dt / self.substeps
        f = self.reduced_rhs
        for _ in range(self.substeps):
            k1 = f(zz, uu)
            k2 = f(zz + 0.5 * h * k1, uu)
            k3 = f(zz + 0.5 * h * k2, uu)
            k4 = f(zz + h * k3, uu)
            zz = zz + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
        out[:, cols, :] = zz
        return out

    def step(self, Z, W, state=None):
        W = np.asarray(W, dtype=float)
        active = np.any(W != 0.0, axis=0)
        return weighted_images(self.images(Z, active), W), state

    def predict(self, j, z):
        w = np.zeros((1, self.m))
        w[0, j] = 1.0
        return self.step(np.atleast_2d(z), w)[0][0]


class InterpolatedEnsemble(OdeEnsemble):
    """Plant driven by the interpolated control ``sum_j W_j u^j``.

    Relaxing over the vertices of a box with this ensemble is the same as
    optimising over the box itself, so it serves as the continuous-control
    reference problem.
    """

    kind = "interpolated"

    def step(self, Z, W, state=None):
        W = np.asarray(W, dtype=float)
        u = W @ self.points
        y = np.asarray(Z, dtype=float)
        h = self.dt / self.substeps
        f = self.reduced_rhs
        for _ in range(self.substeps):
            k1 = f(y, u)
            k2 = f(y + 0.5 * h * k1, u)
            k3 = f(y + 0.5 * h * k2, u)
            k4 = f(y + h * k3, u)
            y = y + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
        return y, state
