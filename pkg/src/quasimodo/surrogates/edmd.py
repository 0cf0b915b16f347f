"""EDMD with monomial dictionaries: one Koopman matrix per control point."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientData, InvalidParam, UnderdeterminedFit
from .base import weighted_images

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class DictionarySpec:
    max_degree: int = 1
    include_constant: bool = True

    def __post_init__(self):
        if self.max_degree < 0:
            raise InvalidParam("max_degree must be nonnegative")
        if self.max_degree == 0 and not self.include_constant:
            raise InvalidParam("an empty dictionary has no features")

    def exponents(self, q):
        """Exponent tuples in graded-lexicographic order."""
        out = []
        for d in range(0 if self.include_constant else 1, self.max_degree + 1):
            for combo in itertools.combinations_with_replacement(range(q), d):
                e = [0] * q
                for c in combo:
                    e[c] += 1
                out.append(tuple(e))
        return out

    def size(self, q):
        k = math.comb(q + self.max_degree, self.max_degree)
        return k if self.include_constant else k - 1

    def readout(self, q):
        """Feature positions of z_1..z_q."""
        if self.max_degree < 1:
            raise InvalidParam("a degree-0 dictionary cannot reproduce the observables")
        start = 1 if self.include_constant else 0
        return np.arange(start, start + q)


def monomial_features(z, spec):
    """Monomials of total degree <= ``spec.max_degree``, batched over leading axes."""
    z = np.asarray(z, dtype=float)
    q = z.shape[-1]
    feats = []
    if spec.include_constant:
        feats.append(np.ones(z.shape[:-1]))
    # build degree d from degree d-1 by multiplying with a coordinate >= the last one
    prev = [((), None)]
    for _ in range(spec.max_degree):
        cur = []
        for combo, val in prev:
            lo = combo[-1] if combo else 0
            for c in range(lo, q):
                v = z[..., c] if val is None else val * z[..., c]
                cur.append((combo + (c,), v))
        feats.extend(v for _, v in cur)
        prev = cur
    return np.stack(feats, axis=-1)


class EdmdModel:
    kind = "edmd"

    def __init__(self, K, spec, q, propagate_lifted=False):
        self.K = np.asarray(K, dtype=float)
        if self.K.ndim != 3 or self.K.shape[1] != self.K.shape[2]:
            raise InvalidParam("K must be a stack of square matrices")
        if not np.all(np.isfinite(self.K)):
            raise InvalidParam("Koopman matrices contain non-finite entries")
        self.spec = spec
        self._q = int(q)
        self.readout = spec.readout(self._q)
        self.propagate_lifted = bool(propagate_lifted)
        if self.K.shape[1] != spec.size(self._q):
            raise InvalidParam("K does not match the dictionary size")

    @property
    def m(self):
        return self.K.shape[0]

    @property
    def q(self):
        return self._q

    @property
    def k(self):
        return self.K.shape[1]

    def lift(self, z):
        return monomial_features(z, self.spec)

    def step(self, Z, W, state=None):
        """Relaxed one-step map.  In lifted mode ``state`` is the lifted batch."""
        W = np.asarray(W, dtype=float)
        psi = self.lift(Z) if (state is None or not self.propagate_lifted) else state
        lifted = np.einsum("bk,mkl->bml", psi, self.K)
        nxt = weighted_images(lifted, W)
        z = nxt[:, self.readout]
        return z, (nxt if self.propagate_lifted else None)


def edmd_fit(pairs, spec, propagate_lifted=False):
    sizes = pairs.sizes()
    q = None
    for j in range(pairs.m):
        if pairs.Z[j].size:
            q = pairs.Z[j].shape[0]
    if q is None:
        raise InsufficientData(sizes, required=1)
    k = spec.size(q)
    Ks = []
    for j in range(pairs.m):
        n = sizes[j]
        if n == 0:
            raise InsufficientData(sizes, required=1, index=j)
        if n < k:
            warnings.warn(f"control {j}: {n} snapshots for {k} features", UnderdeterminedFit,
                          stacklevel=2)
        PsiZ = monomial_features(pairs.Z[j].T, spec).T
        PsiZn = monomial_features(pairs.Zn[j].T, spec).T
        KT = PsiZn @ np.linalg.pinv(PsiZ, rcond=PINV_RCOND)
        Ks.append(KT.T)
    return EdmdModel(np.stack(Ks), spec, q, propagate_lifted)


def edmd_predict(model, j, z):
    lifted = model.lift(np.asarray(z, dtype=float)) @ model.K[j]
    return lifted[..., model.readout]
