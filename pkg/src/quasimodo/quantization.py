"""Finite control sets, hull distances, sum-up rounding and control recovery."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionTooLarge, InvalidParam, ZeroOutsideBox

MAX_VERTEX_DIM = 16


@dataclass(frozen=True)
class BoxControlSet:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidParam("box bounds must be vectors of equal length")
        if np.any(lower > upper):
            raise InvalidParam("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self):
        return self.lower.size

    def contains(self, u, tol=1e-12):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def sample(self, rng, n):
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


@dataclass(frozen=True)
class QuantizedControlSet:
    points: np.ndarray
    parent: BoxControlSet

    def __init__(self, points, parent):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[1] != parent.dim:
            raise InvalidParam("control points do not match the box dimension")
        if len(pts) < 2:
            raise InvalidParam("a quantized control set needs at least two points")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidParam("control points must be distinct")
        for p in pts:
            if not parent.contains(p):
                raise InvalidParam(f"control point {p} lies outside the box")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "parent", parent)

    @property
    def m(self):
        return len(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, j):
        return self.points[j]


def make_vertex_set(U):
    """All 2**n_u corners of the box, lower bound first in each coordinate."""
    n = U.dim
    if n > MAX_VERTEX_DIM:
        raise DimensionTooLarge(f"n_u = {n} gives 2**{n} vertices")
    corners = [np.where(bits, U.upper, U.lower)
               for bits in itertools.product((False, True), repeat=n)]
    return QuantizedControlSet(np.array(corners), U)


def make_star_set(U):
    """Zero plus the lower/upper bound along each coordinate axis."""
    if not U.contains(np.zeros(U.dim)):
        raise ZeroOutsideBox("the star set needs 0 inside the control box")
    pts = [np.zeros(U.dim)]
    for i in range(U.dim):
        for bound in (U.lower[i], U.upper[i]):
            e = np.zeros(U.dim)
            e[i] = bound
            pts.append(e)
    return QuantizedControlSet(np.array(pts), U)


def _segment_distance(a, b):
    """min over lam in [0,1] of max_k |a_k + lam * b_k|, exactly.

    The objective is convex and piecewise linear, so its minimum sits at an
    endpoint, a zero of one component, or a crossing of two components.
    """
    cand = [0.0, 1.0]
    nz = b != 0
    cand.extend((-a[nz] / b[nz]).tolist())
    for sa in (1.0, -1.0):
        db = b[:, None] - sa * b[None, :]
        da = sa * a[None, :] - a[:, None]
        ok = db != 0
        cand.extend((da[ok] / db[ok]).tolist())
    lam = np.clip(np.array(cand), 0.0, 1.0)
    vals = np.max(np.abs(a[None, :] + lam[:, None] * b[None, :]), axis=1)
    return float(vals.min())


def hull_distance(point, vertices):
    """Max-norm distance from ``point`` to the convex hull of ``vertices``."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    V = np.asarray(vertices, dtype=float).reshape(len(vertices), -1)
    m, n = V.shape
    if m == 0:
        raise InvalidParam("vertices must be nonempty")
    if m == 1:
        return float(np.max(np.abs(point - V[0])))
    if m == 2:
        return _segment_distance(point - V[0], V[0] - V[1])
    # LP in (lam_1..lam_m, s): min s  s.t.  |point - V^T lam| <= s, lam in simplex
    c = np.zeros(m + 1)
    c[-1] = 1.0
    A_ub = np.block([[-V.T, -np.ones((n, 1))], [V.T, -np.ones((n, 1))]])
    b_ub = np.concatenate([-point, point])
    A_eq = np.concatenate([np.ones(m), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * m + [(0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"hull distance LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def estimate_D(system, trajectory, U, V, samples, seed=0):
    """Monte-Carlo estimate of the reachable-set gap between U and conv(g(y, V)).

    For delay systems the delayed argument is taken equal to the current state;
    the gap only depends on how the control enters.
    """
    rng = np.random.default_rng(seed)
    traj = np.asarray(trajectory, dtype=float).reshape(len(trajectory), -1)
    if len(traj) == 0:
        raise InvalidParam("trajectory must be nonempty")
    best = 0.0
    for y in traj:
        uu = U.sample(rng, samples)
        gv = system(np.broadcast_to(y, (V.m, y.size)), V.points)
        gu = system(np.broadcast_to(y, (samples, y.size)), uu)
        for g in gu:
            best = max(best, hull_distance(g, gv))
    return best


@dataclass(frozen=True)
class SurAccumulator:
    """Running sums of relaxed and rounded weights, one entry per control."""
    alpha_sum: np.ndarray
    omega_sum: np.ndarray
    steps: int = 0
    dt_sur: float = 1.0

    @classmethod
    def fresh(cls, m, dt_sur=1.0):
        return cls(np.zeros(m), np.zeros(m), 0, float(dt_sur))

    @property
    def m(self):
        return len(self.alpha_sum)


def sur_round(alphas, acc, V=None):
    """Round relaxed rows to one-hot rows by sum-up rounding.

    Returns ``(omegas, controls, acc')``.  ``controls`` is ``None`` when no
    control set is given.  The smallest index wins ties.
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    m = acc.m
    if alphas.shape[1] != m:
        raise InvalidParam(f"rows have {alphas.shape[1]} weights, accumulator has {m}")
    a_sum = acc.alpha_sum.copy()
    w_sum = acc.omega_sum.copy()
    omegas = np.zeros_like(alphas)
    for i, row in enumerate(alphas):
        a_sum += row
        j = int(np.argmax(a_sum - w_sum))
        omegas[i, j] = 1.0
        w_sum[j] += 1.0
    new_acc = SurAccumulator(a_sum, w_sum, acc.steps + len(alphas), acc.dt_sur)
    controls = None
    if V is not None:
        pts = V.points if isinstance(V, QuantizedControlSet) else np.asarray(V, dtype=float)
        controls = omegas @ pts.reshape(m, -1)
    return omegas, controls, new_acc


def interpolate_control(row, V):
    """Convex combination of the control points weighted by ``row``."""
    pts = V.points if isinstance(V, QuantizedControlSet) else np.asarray(V, dtype=float)
    return np.asarray(row, dtype=float) @ pts.reshape(len(pts), -1)


def is_simplex_row(row, tol=1e-10):
    row = np.asarray(row, dtype=float)
    return bool(np.all(row >= -tol) and np.all(row <= 1 + tol) and abs(row.sum() - 1.0) <= tol)
