"""POD bases and Galerkin-projected surrogates, plus the offset-perturbed plant model."""
from __future__ import annotations

import warnings

import numpy as np

from ..dynamics import perturbed
from ..errors import InvalidParam, RankDeficient
from .base import OdeEnsemble
from .edmd import DictionarySpec, monomial_features


def pod_fit(snapshots, ell):
    """Leading ``ell`` left singular vectors of the (n_x, N) snapshot matrix.

    Returns ``(basis, energy)`` with ``energy`` the retained fraction of the
    squared singular values.
    """
    Y = np.asarray(snapshots, dtype=float)
    if Y.ndim != 2:
        raise InvalidParam("snapshots must be an (n_x, N) matrix")
    if not 1 <= ell <= min(Y.shape):
        raise InvalidParam(f"ell={ell} must lie in [1, {min(Y.shape)}]")
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s[0] == 0.0 or s[ell - 1] < 1e-12 * s[0]:
        warnings.warn(f"singular value {ell} is negligible; basis is rank deficient",
                      RankDeficient, stacklevel=2)
    total = float(np.sum(s ** 2))
    energy = float(np.sum(s[:ell] ** 2) / total) if total > 0 else 1.0
    return U[:, :ell].copy(), energy


class PodModel(OdeEnsemble):
    """Galerkin surrogate.  With ``full_state`` the ensemble reads and returns
    plant states (projected on entry, reconstructed on exit); otherwise it
    works on the ``ell`` POD coefficients directly."""

    kind = "pod"

    def __init__(self, system, basis, points, dt, substeps=1, full_state=True, quadratic=False,
                 seed=0):
        basis = np.asarray(basis, dtype=float)
        if basis.shape[0] != system.n_y:
            raise InvalidParam("basis rows must match the plant dimension")
        super().__init__(system, points, dt, substeps, basis)
        self.full_state = bool(full_state)
        self.coeffs = None
        if quadratic:
            self.coeffs = self._fit_quadratic(seed)
        if self.coeffs is not None:
            self._c, self._lin, self._quad = self._split_coeffs(self.coeffs)

    def _fit_quadratic(self, seed):
        """Exact coefficients of the reduced rhs if it is a quadratic polynomial in (z, u).

        The projected finite-difference Burgers rhs is; the fit is checked on
        fresh points and discarded (with a warning) if the check fails.
        """
        rng = np.random.default_rng(seed)
        ell, nu = self.reduced_dim, self.points.shape[1]
        spec = DictionarySpec(2)
        k = spec.size(ell + nu)
        X = rng.uniform(-1.0, 1.0, size=(2 * k, ell + nu))
        F = OdeEnsemble.reduced_rhs(self, X[:, :ell], X[:, ell:])
        M, *_ = np.linalg.lstsq(monomial_features(X, spec), F, rcond=None)
        Xt = rng.uniform(-1.0, 1.0, size=(32, ell + nu))
        Ft = OdeEnsemble.reduced_rhs(self, Xt[:, :ell], Xt[:, ell:])
        gap = np.max(np.abs(monomial_features(Xt, spec) @ M - Ft))
        if gap > 1e-8 * max(1.0, np.max(np.abs(Ft))):
            warnings.warn(f"reduced rhs is not quadratic (mismatch {gap:.3g}); "
                          "using direct projection", RankDeficient, stacklevel=3)
            return None
        return M

    def _split_coeffs(self, M):
        """Constant, linear and (upper-triangular) quadratic parts of the monomial fit."""
        n = self.reduced_dim + self.points.shape[1]
        c, lin = M[0], M[1:n + 1]
        quad = np.zeros((n, n, M.shape[1]))
        rows = M[n + 1:]
        k = 0
        for i in range(n):
            for j in range(i, n):
                quad[i, j] = rows[k]
                k += 1
        return c, lin, quad.reshape(n * n, -1)

    def reduced_rhs(self, z, u):
        if self.coeffs is None:
            return super().reduced_rhs(z, u)
        u = np.broadcast_to(u, z.shape[:-1] + (self.points.shape[1],))
        x = np.concatenate([z, u], axis=-1)
        outer = (x[..., :, None] * x[..., None, :]).reshape(x.shape[:-1] + (-1,))
        return self._c + x @ self._lin + outer @ self._quad

    @property
    def q(self):
        return self.system.n_y if self.full_state else self.reduced_dim

    def step(self, Z, W, state=None):
        if not self.full_state:
            return super().step(Z, W, state)
        z, state = super().step(self.project(Z), W, state)
        return self.reconstruct(z), state

    def predict_reduced(self, j, z):
        w = np.zeros((1, self.m))
        w[0, j] = 1.0
        return OdeEnsemble.step(self, np.atleast_2d(z), w)[0][0]

    def project(self, y):
        return np.asarray(y, dtype=float) @ self.basis

    def reconstruct(self, z):
        return np.asarray(z, dtype=float) @ self.basis.T


def pod_predict(model, j, z):
    """One step of control ``j`` in reduced coordinates."""
    return model.predict_reduced(j, z)


class PerturbedModel(OdeEnsemble):
    """Plant flow with a constant additive term in the right-hand side."""

    kind = "perturbed"

    def __init__(self, system, offset, points, dt, substeps=1):
        self.base_system = system
        self.offset = np.asarray(offset, dtype=float)
        plant = system if not np.any(self.offset) else perturbed(system, self.offset)
        super().__init__(plant, points, dt, substeps)
