"""Receding-horizon closed loop on top of the relaxed surrogate problem."""
from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import ObservableSpec, apply_observable
from .dynamics import DelayHistory, TimeGrid, flow_map
from .errors import InvalidParam, MaxItersReached, MpcAborted, QuasimodoError
from .optimize import SolverConfig, solve_relaxed, uniform_plan
from .quantization import SurAccumulator, interpolate_control, sur_round

log = logging.getLogger(__name__)

MODES = ("interpolate", "sur", "both")


def _ratio(a, b, what):
    r = a / b
    n = int(round(r))
    if n < 1 or abs(r - n) > 1e-9 * max(1.0, r):
        raise InvalidParam(f"{what}: {a} is not an integer multiple of {b}")
    return n


@dataclass(frozen=True)
class MpcConfig:
    p: int
    dt: float
    T_mpc: float
    dt_sur: float = None
    mode: str = "interpolate"
    plant_substeps: int = 1
    warm_start: str = "shift"
    sur_reset: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.dt_sur is None:
            object.__setattr__(self, "dt_sur", self.dt)
        if self.p < 1:
            raise InvalidParam("horizon p must be at least 1")
        if self.mode not in MODES:
            raise InvalidParam(f"mode must be one of {MODES}")
        if self.warm_start not in ("shift", "uniform"):
            raise InvalidParam("warm_start must be 'shift' or 'uniform'")
        if self.plant_substeps < 1:
            raise InvalidParam("plant_substeps must be positive")
        if not (self.dt > 0 and self.dt_sur > 0 and self.T_mpc > 0):
            raise InvalidParam("time steps and duration must be positive")
        _ratio(self.dt, self.dt_sur, "dt / dt_sur")
        if self.p * self.dt > self.T_mpc + 1e-12:
            raise InvalidParam("the horizon p*dt exceeds T_mpc")

    @property
    def fine_steps(self):
        return _ratio(self.dt, self.dt_sur, "dt / dt_sur")

    @property
    def n_steps(self):
        return int(np.floor(self.T_mpc / self.dt + 1e-9))


@dataclass
class MpcLog:
    """Closed-loop record.  Row ``i`` of the per-step arrays belongs to ``times[i]``;
    ``states``, ``observables`` and ``references`` carry one extra final row."""
    mode: str
    times: np.ndarray
    states: np.ndarray
    observables: np.ndarray
    references: np.ndarray
    plans: np.ndarray
    controls: np.ndarray
    fine_controls: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    wall_time: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def steps(self):
        return len(self.plans)


def _pad_history(items, n):
    """Last ``n`` entries, repeating the oldest when fewer are available."""
    if len(items) >= n:
        return items[-n:]
    return [items[0]] * (n - len(items)) + list(items)


class _Observer:
    """Keeps the coarse-step state record needed by delay observables and ESN windows."""

    def __init__(self, observable, window):
        self.spec = observable
        self.window = window
        self.ys = []
        self.zs = []

    def push(self, y):
        self.ys.append(np.array(y, dtype=float))
        need = self.spec.history + 1
        recent = np.array(_pad_history(self.ys, need))
        z = apply_observable(recent, self.spec)[-1]
        self.zs.append(z)
        # only the tail is ever read again
        keep = max(need, 1)
        if len(self.ys) > 4 * keep + 64:
            self.ys = self.ys[-keep:]
        if len(self.zs) > 4 * self.window + 64:
            self.zs = self.zs[-(self.window + 1):]
        return z

    def recent(self):
        return np.array(_pad_history(self.zs, self.window + 1))


def _run_loop(mode, plant, ensemble, observable, V, spec, cfg, y0, history):
    n_f = cfg.fine_steps
    dt_f = cfg.dt_sur
    N = cfg.n_steps
    m = V.m
    window = int(getattr(ensemble, "window", 0))
    obs = _Observer(observable, window)
    y = np.array(y0, dtype=float)
    if plant.delay is not None:
        history = history.copy() if history is not None else DelayHistory.constant(y, 0.0, plant.delay)
    acc = SurAccumulator.fresh(m, dt_f)
    rec = {k: [] for k in ("t", "y", "z", "ref", "plan", "u", "uf", "J", "it", "wall", "ok")}
    plan = None
    z = obs.push(y)

    def finish():
        t_end = len(rec["plan"]) * cfg.dt
        rec_y = rec["y"] + [y]
        rec_z = rec["z"] + [z]
        refs = rec["ref"] + [np.broadcast_to(spec.reference(t_end), (spec.q,)).astype(float)]
        nu = V.points.shape[1]
        return MpcLog(mode, np.array(rec["t"] + [t_end]), np.array(rec_y), np.array(rec_z),
                      np.array(refs),
                      np.array(rec["plan"]).reshape(-1, cfg.p, m),
                      np.array(rec["u"]).reshape(-1, nu),
                      np.array(rec["uf"]).reshape(-1, n_f, nu),
                      np.array(rec["J"]), np.array(rec["it"], dtype=int), np.array(rec["wall"]),
                      {"mode": mode, "p": cfg.p, "dt": cfg.dt, "dt_sur": dt_f, "T_mpc": cfg.T_mpc,
                       "unconverged_solves": int(len(rec["ok"]) - sum(rec["ok"]))})

    for i in range(N):
        t = i * cfg.dt
        tic = time.perf_counter()
        try:
            state = ensemble.synchronize(obs.recent()) if window else None
            if plan is None or cfg.warm_start == "uniform":
                warm = uniform_plan(cfg.p, m)
            else:
                warm = np.vstack([plan[1:], np.full((1, m), 1.0 / m)])
            with warnings.catch_warnings():
                # the iteration cap is routine inside a loop; count it instead
                warnings.simplefilter("ignore", MaxItersReached)
                res = solve_relaxed(ensemble, z, cfg.p, spec, cfg.solver, t0=t,
                                    warm_start=warm, state=state)
            plan = res.plan
            alpha = plan[0]
            if mode == "interpolate":
                u = interpolate_control(alpha, V)
                fine = np.broadcast_to(u, (n_f, u.size)).copy()
            else:
                if cfg.sur_reset:
                    acc = SurAccumulator.fresh(m, dt_f)
                _, fine, acc = sur_round(np.broadcast_to(alpha, (n_f, m)), acc, V)
                u = fine.mean(axis=0)
            ys = flow_map(plant, y, fine, TimeGrid(t, dt_f, n_f), cfg.plant_substeps, history)
        except QuasimodoError as exc:
            raise MpcAborted(i, exc, finish()) from exc
        rec["t"].append(t)
        rec["y"].append(y)
        rec["z"].append(z)
        rec["ref"].append(np.broadcast_to(spec.reference(t), (spec.q,)).astype(float))
        rec["plan"].append(plan)
        rec["u"].append(u)
        rec["uf"].append(fine)
        rec["J"].append(res.J)
        rec["it"].append(res.iters)
        rec["ok"].append(res.converged)
        y = ys[-1]
        z = obs.push(y)
        rec["wall"].append(time.perf_counter() - tic)
        if not np.all(np.isfinite(z)):
            raise MpcAborted(i, "non-finite observable", finish())
    log.info("%s loop finished: %d steps", mode, N)
    return finish()


def run_mpc(plant, ensemble, observable, V, spec, config, y0=None, seed=0, history=None):
    """Closed-loop MPC.  Returns ``{mode: MpcLog}`` (two entries in ``both`` mode)."""
    observable = observable or ObservableSpec()
    if observable.dim(plant.n_y) != ensemble.q:
        raise InvalidParam(f"observable dimension {observable.dim(plant.n_y)} does not match "
                           f"the surrogate ({ensemble.q})")
    if ensemble.m != V.m:
        raise InvalidParam("surrogate ensemble and control set disagree on m")
    if spec.q != ensemble.q:
        raise InvalidParam("objective weight does not match the observable dimension")
    y0 = plant.default_y0 if y0 is None else y0
    modes = ("interpolate", "sur") if config.mode == "both" else (config.mode,)
    out = {}
    for mode in modes:
        lg = _run_loop(mode, plant, ensemble, observable, V, spec, config, y0, history)
        lg.meta.update(seed=seed, system=plant.name)
        out[mode] = lg
    return out


def tracking_metrics(log, component=None, Q=None, t_min=None):
    """Tracking error of the logged observables against the reference."""
    e = log.observables - log.references
    sel = np.ones(len(e), dtype=bool) if t_min is None else log.times >= t_min - 1e-12
    e = e[sel]
    if len(e) == 0:
        raise InvalidParam("no logged rows in the requested window")
    if Q is not None:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        err = np.sqrt(np.maximum(np.einsum("ni,ij,nj->n", e, Q, e), 0.0))
    elif component is not None:
        err = np.abs(e[:, component])
    else:
        err = np.max(np.abs(e), axis=1)
    return {"mse": float(np.mean(err ** 2)), "mean_abs": float(np.mean(np.abs(err))),
            "max_abs": float(np.max(np.abs(err)))}


# --- output ------------------------------------------------------------------

def log_columns(lg):
    ny, q = lg.states.shape[1], lg.observables.shape[1]
    nu, m = lg.controls.shape[1], lg.plans.shape[2]
    return ["t"] + [f"y_{k + 1}" for k in range(ny)] + [f"z_{k + 1}" for k in range(q)] + \
        [f"ref_{k + 1}" for k in range(q)] + [f"u_{k + 1}" for k in range(nu)] + \
        [f"alpha_{k + 1}" for k in range(m)] + ["J", "iters", "wall"]


def write_log_csv(path, lg):
    path = Path(path)
    nu, m = lg.controls.shape[1], lg.plans.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(log_columns(lg))
        for i in range(len(lg.times)):
            row = [lg.times[i], *lg.states[i], *lg.observables[i], *lg.references[i]]
            if i < lg.steps:
                row += [*lg.controls[i], *lg.plans[i, 0], lg.objective[i], lg.iterations[i],
                        lg.wall_time[i]]
            else:
                row += [""] * (nu + m + 3)
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                        for v in row])
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump({**lg.meta, "columns": log_columns(lg), "steps": lg.steps}, fh, indent=2)
    return path


PLOT_TEMPLATE = '''"""Plot a closed-loop log: states vs. reference, applied control, objective."""
import sys

import matplotlib.pyplot as plt
import pandas as pd

csv_paths = {paths!r}
fig, ax = plt.subplots(3, 1, sharex=True, figsize=(8, 8))
for label, path in csv_paths.items():
    df = pd.read_csv(path)
    for c in {zcols!r}:
        ax[0].plot(df["t"], df[c], label=f"{{label}} {{c}}")
    for c in {ucols!r}:
        ax[1].step(df["t"], df[c], where="post", label=f"{{label}} {{c}}")
    ax[2].semilogy(df["t"], df["J"], label=label)
for c in {rcols!r}:
    ax[0].plot(df["t"], df[c], "k--", label=c)
ax[0].set_ylabel("observable")
ax[1].set_ylabel("control")
ax[2].set_ylabel("J")
ax[2].set_xlabel("t")
for a in ax:
    a.legend(fontsize="small")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else {png!r})
'''


def write_plot_script(path, csv_paths, lg, components=None):
    """Emit a standalone matplotlib script reading the given log CSVs."""
    q = lg.observables.shape[1]
    comps = range(q) if components is None else components
    script = PLOT_TEMPLATE.format(
        paths={k: str(v) for k, v in csv_paths.items()},
        zcols=[f"z_{k + 1}" for k in comps], rcols=[f"ref_{k + 1}" for k in comps],
        ucols=[f"u_{k + 1}" for k in range(lg.controls.shape[1])],
        png=str(Path(path).with_suffix(".png")))
    Path(path).write_text(script)
    return Path(path)
