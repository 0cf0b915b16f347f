"""Constant estimation and the objective-value error bounds of the quantized pipeline.

All norms on states are max norms; the matching Lipschitz constant of a
quadratic stage cost is the largest 1-norm of its gradient.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import TimeGrid, builtin_system, flow_map
from .errors import BoundViolated, InvalidParam, MissingComponent
from .optimize import ObjectiveSpec, SolverConfig, solve_relaxed
from .quantization import BoxControlSet, QuantizedControlSet, SurAccumulator, estimate_D, sur_round
from .surrogates.base import InterpolatedEnsemble
from .surrogates.pod import PerturbedModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstantsEstimate:
    L_g: float
    C1: float
    C2: float
    L_gr: float = None
    L_P: float = None
    n_traj: int = 0
    seed: int = 0
    samples: int = 0

    def inflated(self, factor):
        """Copy with every constant multiplied by ``factor``."""
        scale = lambda v: None if v is None else v * factor  # noqa: E731
        return ConstantsEstimate(scale(self.L_g), scale(self.C1), scale(self.C2),
                                 scale(self.L_gr), scale(self.L_P), self.n_traj, self.seed,
                                 self.samples)


def jacobian_inf_norm(system, Y, u, h=1e-6):
    """Induced max-norm of d g / d y at each row of ``Y`` by central differences."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    U = np.broadcast_to(np.asarray(u, dtype=float), (len(Y), np.size(u)))
    J = np.empty((len(Y), n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        J[:, :, k] = (system(Y + e, U) - system(Y - e, U)) / (2.0 * h)
    return np.max(np.sum(np.abs(J), axis=2), axis=1)


def estimate_constants(system, V, n_traj=10, T_sample=1.0, dt=1e-2, seed=0, y_box=None,
                       surrogate=None, substeps=1):
    """Sample L_g, C1, C2 (and L_gr for a surrogate rhs) along autonomous trajectories.

    Each control point is held constant on ``n_traj`` trajectories started
    uniformly in ``y_box`` (default: the unit box around the default state).
    """
    if n_traj < 1:
        raise InvalidParam("n_traj must be at least 1")
    if system.delay is not None:
        raise InvalidParam("constant estimation needs an ODE plant")
    rng = np.random.default_rng(seed)
    if y_box is None:
        c = np.zeros(system.n_y) if system.default_y0 is None else np.asarray(system.default_y0)
        y_box = (c - 1.0, c + 1.0)
    lo, hi = (np.asarray(b, dtype=float) for b in y_box)
    steps = max(1, int(round(T_sample / dt)))
    grid = TimeGrid(0.0, dt, steps)
    L_g = L_gr = C1 = C2 = 0.0
    count = 0
    for _ in range(n_traj):
        y0 = rng.uniform(lo, hi)
        for u in V.points:
            ys = np.vstack([y0, flow_map(system, y0, np.broadcast_to(u, (steps, u.size)), grid,
                                         substeps)])
            G = system(ys, np.broadcast_to(u, (len(ys), u.size)))
            C2 = max(C2, float(np.max(np.abs(G))))
            C1 = max(C1, float(np.max(np.abs(np.diff(G, axis=0)))) / dt)
            L_g = max(L_g, float(np.max(jacobian_inf_norm(system, ys, u))))
            if surrogate is not None:
                L_gr = max(L_gr, float(np.max(jacobian_inf_norm(surrogate, ys, u))))
            count += len(ys)
    return ConstantsEstimate(L_g, C1, C2, L_gr if surrogate is not None else None, None,
                             n_traj, seed, count)


def cost_lipschitz(Q, states, norm="inf", margin=0.0, box=False):
    """Lipschitz constant of ``y -> y^T Q y`` over the sampled states.

    ``norm`` is the state norm ("inf" or 2); the gradient is measured in the
    dual norm.  With ``box`` the maximum is taken over the corners of the
    bounding box of ``states`` widened by ``margin`` (relative half-width),
    otherwise over the states scaled by ``1 + margin``.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Y = np.atleast_2d(np.asarray(states, dtype=float))
    if box:
        lo, hi = Y.min(axis=0), Y.max(axis=0)
        c, w = 0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 + margin)
        if Y.shape[1] > 16:
            raise InvalidParam("box corners are enumerated only up to 16 dimensions")
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * Y.shape[1])).reshape(Y.shape[1], -1).T
        pts = c + signs * w
    else:
        pts = Y * (1.0 + margin)
    grad = pts @ (Q + Q.T).T
    if norm == "inf":
        return float(np.max(np.sum(np.abs(grad), axis=1)))
    if norm == 2:
        return float(np.max(np.linalg.norm(grad, axis=1)))
    raise InvalidParam(f"unsupported norm {norm!r}")


def gronwall_envelope(M, y0_gap, L, t):
    M, y0_gap = np.asarray(M, dtype=float), np.asarray(y0_gap, dtype=float)
    t = np.asarray(t, dtype=float)
    if L < 0 or any(np.any(a < 0) for a in (M, y0_gap, t)):
        raise InvalidParam("envelope inputs must be nonnegative")
    out = (M + y0_gap) * np.exp(L * t)
    return float(out) if out.ndim == 0 else out


def m1_bound(D, T):
    return D * T


def m2_bound(C1, C2, T, m, dt):
    if m < 1:
        raise InvalidParam("m must be at least 1")
    return (C2 + C1 * T) * (m - 1) * dt


def amplification(L, dt, p):
    """``e^x (e^{p x} - 1) / (e^x - 1)`` with ``x = L dt``; equals ``p`` at ``x = 0``."""
    if L < 0 or dt <= 0 or p < 1:
        raise InvalidParam("need L >= 0, dt > 0, p >= 1")
    x = L * dt
    if x == 0.0:
        return float(p)
    return float(np.exp(x) * np.expm1(p * x) / np.expm1(x))


def duffing_one_step(eps, L):
    """Model-error recursion for a constant offset ``eps`` in the rhs."""
    def E(e, dt):
        return (eps * dt + e) * np.exp(L * dt)
    return E


def model_error_sequence(E0, one_step, p, dt, check_monotone=True):
    """``E_model(t_0..t_p)`` from ``E_model(t_i) = E(E_model(t_{i-1}), dt)``."""
    if check_monotone:
        probe = np.array([0.0, 1e-6, 1e-3, 1.0])
        vals = np.array([one_step(e, dt) for e in probe])
        if np.any(np.diff(vals) < -1e-15):
            raise InvalidParam("one-step bound is not monotone in its first argument")
    out = np.empty(p + 1)
    out[0] = E0
    for i in range(1, p + 1):
        out[i] = one_step(out[i - 1], dt)
    return out


def e_component(L_P, M, A):
    """``L_P * M * A``: the form shared by E_V, E_MI and E_MIr."""
    return L_P * M * A


COMPONENTS = ("L_P", "M1", "M2", "amplification", "E_model", "E_MIr")


def composite_bounds(**inputs):
    """Composite bounds from L_P, M1, M2, amplification, E_model (t_0..t_p) and E_MIr."""
    for name in COMPONENTS:
        if inputs.get(name) is None:
            raise MissingComponent(f"missing bound component {name!r}")
    L_P, A = inputs["L_P"], inputs["amplification"]
    E_V = e_component(L_P, inputs["M1"], A)
    E_MI = e_component(L_P, inputs["M2"], A)
    E_r = 2.0 * L_P * float(np.sum(inputs["E_model"]))
    E_MIr = inputs["E_MIr"]
    return {"E_V": E_V, "E_MI": E_MI, "E_r": E_r, "E_MIr": E_MIr,
            "E1": E_V + E_MI + E_r,
            "E2a": E_V + E_MI + 2.0 * E_r + E_MIr,
            "E2b": E_V + E_MI + E_r,
            "E3": E_V + E_r}


# --- end-to-end experiment ------------------------------------------------------

@dataclass
class BoundsConfig:
    eps: float = 0.1
    u_min: float = -4.0
    u_max: float = 4.0
    dt: float = 2e-3
    T: float = 1.0
    y0: tuple = (0.5, 0.0)
    Q: tuple = ((1.0, 0.0), (0.0, 0.1))
    system_params: dict = field(default_factory=lambda: {"alpha": -1.0, "beta": 1.0,
                                                         "delta": 0.0})
    safety: float = 1.1
    cost_margin: float = 0.2
    n_traj: int = 20
    T_sample: float = 1.0
    sample_box: tuple = ((-1.5, -1.5), (1.5, 1.5))
    seed: int = 0
    max_iters: int = 120
    gap_tol: float = 1e-6
    solver: dict = field(default_factory=dict)


@dataclass
class BoundsReport:
    times: np.ndarray
    constants: ConstantsEstimate
    D: float
    L_P: float
    E_model: np.ndarray
    envelopes: dict
    gaps: dict
    trajectories: dict
    controls: dict
    objective: dict
    violations: list
    config: dict

    def summary(self):
        return {"constants": asdict(self.constants), "D": self.D, "L_P": self.L_P,
                "final_state_inf": {k: float(np.max(np.abs(v[-1])))
                                    for k, v in self.trajectories.items()},
                "objective": self.objective,
                "max_gap": {k: float(np.max(v)) for k, v in self.gaps.items()},
                "final_envelope": {k: float(v[-1]) for k, v in self.envelopes.items()},
                "violations": len(self.violations), "config": self.config}


def _prefix_costs(ys, Q):
    return np.cumsum(np.einsum("ni,ij,nj->n", ys, Q, ys))


def verify_bounds_experiment(config=None, raise_on_violation=True):
    """Duffing study: the optimal continuous control vs. the relaxed surrogate solution
    applied directly (bound E3) and after sum-up rounding (bound E2.b).

    Every control problem covers the whole horizon ``[0, T]`` in one solve.
    Realized gaps of the prefix objectives ``J_i = sum_{k<=i} P(y_k)`` are
    compared with the bounds evaluated for horizon length ``i``.
    """
    cfg = config or BoundsConfig()
    p = int(round(cfg.T / cfg.dt))
    plant = builtin_system("duffing", {**cfg.system_params, "eps": 0.0})
    U = BoxControlSet([cfg.u_min], [cfg.u_max])
    V = QuantizedControlSet([[cfg.u_min], [cfg.u_max]], U)
    Q = np.asarray(cfg.Q, dtype=float)
    y0 = np.asarray(cfg.y0, dtype=float)
    spec = ObjectiveSpec(Q, np.zeros(2), cfg.dt)
    solver = SolverConfig(**{"max_iters": cfg.max_iters, **cfg.solver})

    exact = InterpolatedEnsemble(plant, V.points, cfg.dt)
    surrogate = PerturbedModel(plant, [0.0, cfg.eps], V.points, cfg.dt)
    opt = solve_relaxed(exact, y0, p, spec, solver)
    rel = solve_relaxed(surrogate, y0, p, spec, solver)
    log.info("optimal J=%.6g (%d it), relaxed surrogate J=%.6g (%d it)",
             opt.J, opt.iters, rel.J, rel.iters)

    grid = TimeGrid(0.0, cfg.dt, p)
    u_opt = opt.plan @ V.points
    u_int = rel.plan @ V.points
    _, u_sur, _ = sur_round(rel.plan, SurAccumulator.fresh(V.m, cfg.dt), V)
    traj = {name: np.vstack([y0, flow_map(plant, y0, u, grid)])
            for name, u in (("optimal", u_opt), ("interpolate", u_int), ("sur", u_sur))}

    # constants, inflated by the safety factor before entering any formula
    raw = estimate_constants(plant, V, cfg.n_traj, cfg.T_sample, cfg.dt * 10, cfg.seed,
                             cfg.sample_box, surrogate=surrogate.system)
    all_states = np.vstack(list(traj.values()))
    L_P = cost_lipschitz(Q, all_states, "inf", cfg.cost_margin, box=True)
    const = ConstantsEstimate(raw.L_g, raw.C1, raw.C2, raw.L_gr, L_P, raw.n_traj, raw.seed,
                              raw.samples).inflated(cfg.safety)
    D = estimate_D(plant, all_states[::50], U, V, samples=16, seed=cfg.seed)
    E_model = model_error_sequence(0.0, duffing_one_step(cfg.eps, const.L_g), p, cfg.dt)

    env = {k: np.empty(p) for k in ("E3", "E2b", "E1", "E2a", "E_MI", "E_r")}
    for i in range(1, p + 1):
        Ti = i * cfg.dt
        A = amplification(const.L_g, cfg.dt, i)
        A_r = amplification(const.L_gr, cfg.dt, i)
        M2 = m2_bound(const.C1, const.C2, Ti, V.m, cfg.dt)
        E_MIr = e_component(const.L_P, M2, A_r)
        b = composite_bounds(L_P=const.L_P, M1=m1_bound(D, Ti), M2=M2, amplification=A,
                             E_model=E_model[:i + 1], E_MIr=E_MIr)
        for k in env:
            env[k][i - 1] = b[k]

    J = {k: _prefix_costs(v[1:], Q) for k, v in traj.items()}
    gaps = {"interpolate": np.abs(J["optimal"] - J["interpolate"]),
            "sur": np.abs(J["optimal"] - J["sur"])}
    violations = []
    for name, bound in (("interpolate", "E3"), ("sur", "E2b")):
        bad = np.flatnonzero(gaps[name] > env[bound] + cfg.gap_tol)
        violations += [(name, bound, int(i) + 1, float(gaps[name][i]), float(env[bound][i]))
                       for i in bad]
    cfg_dict = asdict(cfg)
    report = BoundsReport(grid.times, const, float(D), float(const.L_P), E_model, env, gaps,
                          traj, {"optimal": u_opt, "interpolate": u_int, "sur": u_sur},
                          {"optimal": float(J["optimal"][-1]),
                           "interpolate": float(J["interpolate"][-1]),
                           "sur": float(J["sur"][-1]),
                           "relaxed_surrogate": float(rel.J)},
                          violations, cfg_dict)
    if violations and raise_on_violation:
        name, bound, step, real, val = violations[0]
        raise BoundViolated(step, real, val, f"{bound} ({name})")
    return report


def write_bounds_report(report, out_dir):
    """JSON summary, per-step CSV and a plot script."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bounds_report.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, default=float)
    cols = ["t"]
    for k in report.trajectories:
        cols += [f"{k}_y1", f"{k}_y2"]
    cols += [f"u_{k}" for k in report.controls]
    cols += [f"gap_{k}" for k in report.gaps] + list(report.envelopes) + ["E_model"]
    with open(out / "bounds_series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i, t in enumerate(report.times):
            row = [t]
            for v in report.trajectories.values():
                row += list(v[i])
            step = i - 1  # controls act on [t_i, t_{i+1}), gaps/bounds belong to t_i, i >= 1
            row += [report.controls[k][i][0] if i < len(report.controls[k]) else ""
                    for k in report.controls]
            row += [report.gaps[k][step] if step >= 0 else 0.0 for k in report.gaps]
            row += [report.envelopes[k][step] if step >= 0 else 0.0 for k in report.envelopes]
            row += [report.E_model[i]]
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                        for v in row])
    (out / "plot_bounds.py").write_text(BOUNDS_PLOT)
    return out


BOUNDS_PLOT = '''"""Plot the bound study: trajectories, controls, realized gaps against the bounds."""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("bounds_series.csv")
fig, ax = plt.subplots(3, 1, sharex=True, figsize=(8, 9))
for name, color in (("optimal", "k"), ("interpolate", "tab:blue"), ("sur", "tab:red")):
    ax[0].plot(df["t"], df[f"{name}_y1"], color=color, label=f"{name} y1")
    ax[0].plot(df["t"], df[f"{name}_y2"], color=color, ls="--", label=f"{name} y2")
    ax[1].step(df["t"], df[f"u_{name}"], where="post", color=color, label=name)
ax[2].semilogy(df["t"], df["gap_interpolate"], color="tab:blue", label="gap (relaxed)")
ax[2].semilogy(df["t"], df["E3"], color="tab:blue", ls=":", label="E3")
ax[2].semilogy(df["t"], df["gap_sur"], color="tab:red", label="gap (SUR)")
ax[2].semilogy(df["t"], df["E2b"], color="tab:red", ls=":", label="E2.b")
ax[0].set_ylabel("y")
ax[1].set_ylabel("u")
ax[2].set_ylabel("|J* - J|")
ax[2].set_xlabel("t")
for a in ax:
    a.legend(fontsize="small")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "bounds.png")
'''
