"""Echo-state networks: one shared random reservoir, linear readouts per control.

The reservoir update with teacher forcing is

    r(k+1) = sigma * tanh(W_res r(k) + W_fb z_k [+ W_in u_k])

and a readout maps r(k+1) to z_{k+1}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import (InsufficientData, InvalidParam, ReservoirNotInitialized,
                      SequenceTooShort, SpectralRadiusZero)
from .base import weighted_images


@dataclass(frozen=True)
class Reservoir:
    W_res: np.ndarray
    W_fb: np.ndarray
    sigma: float
    rho: float
    W_in: Optional[np.ndarray] = None

    @property
    def n_r(self):
        return self.W_res.shape[0]

    def update(self, R, Z, U=None):
        """Batched reservoir step: ``R`` (B, n_r), ``Z`` (B, q), optional ``U`` (B, n_u)."""
        drive = R @ self.W_res.T + Z @ self.W_fb.T
        if U is not None and self.W_in is not None:
            drive = drive + U @ self.W_in.T
        return self.sigma * np.tanh(drive)

    def run(self, zs, us=None, r0=None):
        """Teacher-forced states r(1..n) for inputs z_0..z_{n-1}; returns (n, n_r)."""
        zs = np.asarray(zs, dtype=float)
        r = np.zeros(self.n_r) if r0 is None else np.asarray(r0, dtype=float).copy()
        out = np.empty((len(zs), self.n_r))
        # one matrix-vector product per step; precompute the input drive
        drive_in = zs @ self.W_fb.T
        if us is not None and self.W_in is not None:
            drive_in = drive_in + np.asarray(us, dtype=float) @ self.W_in.T
        for k in range(len(zs)):
            r = self.sigma * np.tanh(self.W_res @ r + drive_in[k])
            out[k] = r
        return out


def spectral_radius(A):
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def esn_init(n_r, rho=0.75, sparsity=0.9, sigma=0.99, seed=0, q=1, n_u=None, input_scale=1.0):
    """Draw a sparse reservoir with spectral radius ``rho``."""
    if n_r < 1:
        raise InvalidParam("n_r must be at least 1")
    if not 0.0 <= sparsity < 1.0:
        raise InvalidParam("sparsity must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(n_r, n_r))
    W[rng.random((n_r, n_r)) < sparsity] = 0.0
    radius = spectral_radius(W)
    if radius < 1e-12:
        raise SpectralRadiusZero(
            f"reservoir draw with seed {seed} is nilpotent; try another seed or lower sparsity")
    W *= rho / radius
    W_fb = rng.uniform(-1.0, 1.0, size=(n_r, q))
    W_in = None
    if n_u is not None:
        W_in = input_scale * rng.uniform(-1.0, 1.0, size=(n_r, n_u))
    return Reservoir(W, W_fb, float(sigma), float(rho), W_in)


def _ridge(targets, R, beta):
    """Readout W (q, n_r) minimising ||W R - targets||^2 + beta ||W||^2 (columns are samples)."""
    n_r = R.shape[0]
    G = R @ R.T + beta * np.eye(n_r)
    return np.linalg.solve(G, R @ targets.T).T


def _teacher_states(traj, reservoir, washout, use_input=False, noise=0.0, seed=0):
    """Teacher-forced reservoir states.  ``noise`` adds Gaussian jitter to the fed-back
    observables (not to the targets), which keeps free-running rollouts stable."""
    n = len(traj) - 1
    if n <= washout:
        raise SequenceTooShort(f"trajectory has {n} transitions, washout is {washout}")
    if noise < 0:
        raise InvalidParam("noise must be nonnegative")
    us = traj.controls_applied if use_input else None
    zs = traj.observables[:-1]
    if noise > 0:
        zs = zs + noise * np.random.default_rng(seed).standard_normal(zs.shape)
    R = reservoir.run(zs, us)
    return R, traj.observables[1:]


class EsnModel:
    """Shared-reservoir ensemble.  The rollout state is the reservoir vector."""

    kind = "esn"

    def __init__(self, reservoir, W_out, beta=1e-4, window=20):
        self.reservoir = reservoir
        self.W_out = np.asarray(W_out, dtype=float)  # (m, q, n_r)
        self.beta = float(beta)
        self.window = int(window)
        self.state = None

    @property
    def m(self):
        return self.W_out.shape[0]

    @property
    def q(self):
        return self.W_out.shape[1]

    def synchronize(self, window):
        """Reservoir state after replaying ``window[:-1]`` from zero.

        The last sample is the current observable, consumed by the next step.
        """
        window = np.atleast_2d(np.asarray(window, dtype=float))
        if window.shape[1] != self.q:
            window = window.reshape(-1, self.q)
        if len(window) < 2:
            return np.zeros(self.reservoir.n_r)
        return self.reservoir.run(window[:-1])[-1]

    def reset(self, window):
        self.state = self.synchronize(window)
        return self.state

    def step(self, Z, W, state=None):
        Z = np.asarray(Z, dtype=float)
        R = np.zeros((len(Z), self.reservoir.n_r)) if state is None else state
        R = self.reservoir.update(R, Z)
        images = np.einsum("bn,mqn->bmq", R, self.W_out)
        return weighted_images(images, np.asarray(W, dtype=float)), R


def esn_fit(traj, reservoir, washout=100, beta=1e-4, m=None, window=20, noise=0.0, seed=0):
    R, targets = _teacher_states(traj, reservoir, washout, noise=noise, seed=seed)
    labels = traj.control_indices
    m = int(m if m is not None else labels.max() + 1)
    keep = np.arange(len(labels)) >= washout
    sizes = {j: int(np.sum(keep & (labels == j))) for j in range(m)}
    W_out = np.empty((m, traj.q, reservoir.n_r))
    for j in range(m):
        sel = keep & (labels == j)
        if not sel.any():
            raise InsufficientData(sizes, required=1, index=j)
        W_out[j] = _ridge(targets[sel].T, R[sel].T, beta)
    return EsnModel(reservoir, W_out, beta, window)


def esn_predict(model, j, z_current):
    """One reservoir step fed with ``z_current`` followed by readout ``j``."""
    if model.state is None:
        raise ReservoirNotInitialized("call reset(window) before predicting")
    r = model.reservoir.update(model.state[None, :], np.atleast_2d(z_current))[0]
    model.state = r
    return model.W_out[j] @ r


class AugmentedEsnModel:
    """Reservoir driven by the control itself, with a single readout."""

    kind = "esn_augmented"

    def __init__(self, reservoir, W_out, beta=1e-4, window=20):
        if reservoir.W_in is None:
            raise InvalidParam("augmented ESN needs an input matrix")
        self.reservoir = reservoir
        self.W_out = np.asarray(W_out, dtype=float)  # (q, n_r)
        self.beta = float(beta)
        self.window = int(window)

    @property
    def q(self):
        return self.W_out.shape[0]

    def synchronize(self, window, controls):
        """``controls[k]`` is the input applied after ``window[k]``."""
        window = np.atleast_2d(np.asarray(window, dtype=float))
        if len(window) < 2:
            return np.zeros(self.reservoir.n_r)
        us = np.asarray(controls, dtype=float).reshape(len(window) - 1, -1)
        return self.reservoir.run(window[:-1], us)[-1]

    def step_controls(self, Z, U, R):
        R = self.reservoir.update(R, Z, U)
        return R @ self.W_out.T, R

    def rollout(self, z0, controls, r0):
        controls = np.asarray(controls, dtype=float).reshape(len(controls), -1)
        z = np.atleast_2d(np.asarray(z0, dtype=float))
        r = np.atleast_2d(r0)
        out = np.empty((len(controls), self.q))
        for i, u in enumerate(controls):
            z, r = self.step_controls(z, u[None, :], r)
            out[i] = z[0]
        return out


def esn_fit_augmented(traj, reservoir, washout=100, beta=1e-4, window=20, noise=0.0, seed=0):
    if reservoir.W_in is None:
        raise InvalidParam("reservoir was drawn without an input matrix (pass n_u to esn_init)")
    R, targets = _teacher_states(traj, reservoir, washout, use_input=True, noise=noise, seed=seed)
    R, targets = R[washout:], targets[washout:]
    if len(R) == 0:
        raise InsufficientData({0: 0}, required=1, index=0)
    return AugmentedEsnModel(reservoir, _ridge(targets.T, R.T, beta), beta, window)
