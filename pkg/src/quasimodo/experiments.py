"""Drivers behind the command-line interface: data, training, closed loops, the data study."""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bounds import BoundsConfig, verify_bounds_experiment, write_bounds_report
from .datagen import LabeledTrajectory, generate_training_data, partition_by_control
from .dynamics import TimeGrid, builtin_system, flow_map, integrate_batch
from .errors import ConfigError, InvalidParam
from .mpc import run_mpc, tracking_metrics, write_log_csv, write_plot_script
from .surrogates import (DictionarySpec, PerturbedModel, PodModel, edmd_fit, esn_fit,
                         esn_fit_augmented, esn_init, pod_fit)

log = logging.getLogger(__name__)


# --- data and training ---------------------------------------------------------

def generate(cfg):
    plant = cfg.system()
    _, V = cfg.control_sets()
    d = cfg.section("data")
    return generate_training_data(plant, V, float(d["dt"]), float(d["T_train"]),
                                  substeps=int(d.get("substeps", 1)), seed=int(d.get("seed", 0)),
                                  y0=d.get("y0"), observable=cfg.observable())


def _relative(pred, true):
    den = np.linalg.norm(true)
    return float(np.linalg.norm(pred - true) / den) if den > 0 else float(np.linalg.norm(pred))


def train(cfg, traj):
    """Fit the configured surrogate; returns ``(model, report)`` with a held-out one-step error."""
    plant = cfg.system()
    _, V = cfg.control_sets()
    d, mdl = cfg.section("data"), cfg.section("model")
    if not mdl:
        raise ConfigError("model", "missing")
    kind = mdl["kind"]
    dt = float(d["dt"])
    head, tail = traj.split(float(d.get("holdout", 0.1)))
    report = {"kind": kind, "train_samples": len(head), "holdout_samples": len(tail)}
    if kind == "edmd":
        spec = DictionarySpec(int(mdl.get("max_degree", 1)), bool(mdl.get("include_constant", True)))
        model = edmd_fit(partition_by_control(head, V.m), spec,
                         bool(mdl.get("propagate_lifted", False)))
        W = np.eye(V.m)[tail.control_indices]
        pred, _ = model.step(tail.observables[:-1], W)
        report["one_step_error"] = _relative(pred, tail.observables[1:])
    elif kind == "esn":
        seed = int(mdl.get("seed", d.get("seed", 0)))
        res = esn_init(int(mdl.get("n_r", 200)), float(mdl.get("rho", 0.75)),
                       float(mdl.get("sparsity", 0.9)), float(mdl.get("sigma", 0.99)),
                       seed=seed, q=traj.q)
        model = esn_fit(head, res, washout=int(mdl.get("washout", 100)),
                        beta=float(mdl.get("beta", 1e-4)), m=V.m,
                        window=int(mdl.get("window", 20)), noise=float(mdl.get("noise", 0.0)),
                        seed=seed)
        # teacher-forced replay over the whole record, scored on the tail
        R = res.run(traj.observables[:-1])
        n0 = len(head) - 1
        pred = np.einsum("kn,kqn->kq", R[n0:], model.W_out[traj.control_indices[n0:]])
        report["one_step_error"] = _relative(pred, traj.observables[n0 + 1:])
    elif kind == "pod":
        if traj.states is None:
            raise InvalidParam("POD training needs full states")
        ell = int(mdl["ell"])
        basis, energy = pod_fit(head.states.T, ell)
        model = PodModel(plant, basis, V.points, dt, int(mdl.get("substeps", 1)),
                         full_state=True, quadratic=bool(mdl.get("quadratic", True)),
                         seed=int(d.get("seed", 0)))
        W = np.eye(V.m)[tail.control_indices]
        pred, _ = model.step(tail.states[:-1], W)
        report.update(energy=energy, ell=ell, quadratic=model.coeffs is not None,
                      one_step_error=_relative(pred, tail.states[1:]))
    elif kind == "perturbed":
        offset = np.asarray(mdl.get("offset", np.zeros(plant.n_y)), dtype=float)
        model = PerturbedModel(plant, offset, V.points, dt, int(mdl.get("substeps", 1)))
        W = np.eye(V.m)[tail.control_indices]
        pred, _ = model.step(tail.observables[:-1], W)
        report["one_step_error"] = _relative(pred, tail.observables[1:])
    else:
        raise ConfigError("model.kind", f"unsupported kind {kind!r}")
    log.info("trained %s surrogate, held-out one-step error %.3g", kind, report["one_step_error"])
    return model, report


# --- closed loop -----------------------------------------------------------------

def _initial_state(cfg, plant):
    sec = cfg.section("mpc")
    y0 = sec.get("y0", "default")
    if y0 == "default" or y0 is None:
        return np.array(plant.default_y0, dtype=float)
    if y0 == "end_of_training":
        # continue from where the (deterministic) training run stopped
        return generate(cfg).states[-1]
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (plant.n_y,):
        raise ConfigError("mpc.y0", "dimension does not match the plant")
    return y0


def uncontrolled_run(plant, y0, dt, n_steps, substeps):
    """Free plant with u = 0 over ``n_steps`` coarse steps; returns the final state."""
    controls = np.zeros((n_steps, plant.n_u))
    return flow_map(plant, y0, controls, TimeGrid(0.0, dt, n_steps), substeps)[-1]


def closed_loop(cfg, model):
    """Run the configured MPC; returns ``(logs, summary)``."""
    plant = cfg.system()
    U, V = cfg.control_sets()
    mcfg = cfg.mpc_config()
    spec = cfg.objective()
    sec = cfg.section("mpc")
    y0 = _initial_state(cfg, plant)
    seed = int(cfg.section("data").get("seed", 0))
    t0 = time.perf_counter()
    logs = run_mpc(plant, model, cfg.observable(), V, spec, mcfg, y0=y0, seed=seed)
    summary = {"wall_time": time.perf_counter() - t0, "modes": {}}
    metrics = sec.get("metrics") or {}
    for mode, lg in logs.items():
        m = tracking_metrics(lg, component=metrics.get("component"), t_min=metrics.get("t_min"))
        m.update(final_state_norm=float(np.linalg.norm(lg.states[-1])),
                 unconverged_solves=int(lg.meta.get("unconverged_solves", 0)),
                 mean_iterations=float(np.mean(lg.iterations)))
        summary["modes"][mode] = m
    if sec.get("baseline") == "zero":
        if not U.contains(np.zeros(U.dim)):
            raise ConfigError("mpc.baseline", "u = 0 is not admissible")
        n_fine = mcfg.n_steps * mcfg.fine_steps
        y_free = uncontrolled_run(plant, y0, mcfg.dt_sur, n_fine, mcfg.plant_substeps)
        summary["uncontrolled_final_state_norm"] = float(np.linalg.norm(y_free))
    return logs, summary


def write_closed_loop(out_dir, logs):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for mode, lg in logs.items():
        paths[mode] = write_log_csv(out / f"mpc_{mode}.csv", lg)
    first = next(iter(logs.values()))
    write_plot_script(out / "plot_mpc.py", {k: p.name for k, p in paths.items()}, first)
    return paths


# --- bounds -----------------------------------------------------------------------

def bounds_config(cfg):
    sec = dict(cfg.section("bounds"))
    known = {f.name for f in fields(BoundsConfig)}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"bounds.{sorted(unknown)[0]}", "unknown field")
    for key in ("y0", "sample_box"):
        if key in sec:
            sec[key] = tuple(tuple(v) if isinstance(v, list) else v for v in sec[key])
    if "Q" in sec:
        sec["Q"] = tuple(tuple(r) for r in sec["Q"])
    return BoundsConfig(**sec)


def verify_bounds(cfg, out_dir=None):
    report = verify_bounds_experiment(bounds_config(cfg), raise_on_violation=False)
    if out_dir is not None:
        write_bounds_report(report, out_dir)
    return report


# --- data-efficiency study -----------------------------------------------------------

STUDY_DEFAULTS = {"T_data": 750.0, "dt": 0.05, "substeps": 10, "horizon": 2.0,
                  "sizes": [100, 300, 1000, 3000, 10000, 15000], "trials": 20, "n_eval": 100,
                  "sync_steps": 50, "burn_in": 10.0, "n_r": 200, "rho": 0.75, "sparsity": 0.9,
                  "sigma": 0.99, "beta": 1e-4, "washout": 50, "noise": 3e-3,
                  "input_scale": 0.05, "seed": 0}


def _simulate_batch(plant, y0, controls, dt, substeps):
    """States ``(..., n+1, n_y)`` for control rows ``(..., n, n_u)``."""
    ys = [y0]
    y = y0
    for k in range(controls.shape[-2]):
        y = integrate_batch(plant, y, controls[..., k, :], dt, substeps)
        ys.append(y)
    return np.stack(ys, axis=-2)


def _burn_in(plant, rng, n, lo, hi, steps, dt, substeps):
    y0 = rng.uniform(-10.0, 10.0, size=(n, plant.n_y))
    u = rng.uniform(lo, hi, size=(n, steps, 1))
    return _simulate_batch(plant, y0, u, dt, substeps)[:, -1]


def _interp_weights(u, v):
    """Convex weights of scalar controls on the segment [v0, v1], clipped at its ends."""
    a = np.clip((u - v[0]) / (v[1] - v[0]), 0.0, 1.0)
    return np.stack([1.0 - a, a], axis=-1)


def _rel_l2(pred, true):
    n = len(true)
    return (np.linalg.norm((pred - true).reshape(n, -1), axis=1)
            / np.linalg.norm(true.reshape(n, -1), axis=1))


def data_efficiency_trial(study, variant, trial):
    """One repetition: fresh data, both surrogates at every size, errors under U and V draws.

    Returns rows ``(size, eval_set, model, mean relative L2 error)``.
    """
    s = {**STUDY_DEFAULTS, **study}
    lo, hi = (float(x) for x in variant["U"])
    v = np.asarray(variant["V"], dtype=float).reshape(-1)
    rng = np.random.default_rng([int(s["seed"]), int(variant.get("index", 0)), int(trial)])
    plant = builtin_system(variant["system"], variant.get("params"))
    dt, sub = float(s["dt"]), int(s["substeps"])
    N = int(round(s["T_data"] / dt))
    H = int(round(s["horizon"] / dt))
    W = int(s["sync_steps"])
    burn = int(round(s["burn_in"] / dt))

    y0 = _burn_in(plant, rng, 2, lo, hi, burn, dt, sub)
    jv = rng.integers(0, len(v), size=N)
    u_v = v[jv][:, None]
    u_u = rng.uniform(lo, hi, size=(N, 1))
    Y = _simulate_batch(plant, y0, np.stack([u_v, u_u]), dt, sub)
    # common per-component normalisation; errors are measured in these units
    scale = np.max(np.abs(Y.reshape(-1, plant.n_y)), axis=0)
    u_scale = max(abs(lo), abs(hi))
    Z = Y / scale
    res = esn_init(int(s["n_r"]), float(s["rho"]), float(s["sparsity"]), float(s["sigma"]),
                   seed=int(rng.integers(2 ** 31)), q=plant.n_y, n_u=1,
                   input_scale=float(s["input_scale"]))

    e0 = _burn_in(plant, rng, int(s["n_eval"]), lo, hi, burn, dt, sub)
    evals = {}
    for kind in ("V", "U"):
        if kind == "V":
            ue = v[rng.integers(0, len(v), size=(len(e0), W + H))][..., None]
        else:
            ue = rng.uniform(lo, hi, size=(len(e0), W + H, 1))
        evals[kind] = (ue, _simulate_batch(plant, e0, ue, dt, sub) / scale)

    rows = []
    for n in s["sizes"]:
        n = int(n)
        tv = LabeledTrajectory(np.arange(n + 1) * dt, Z[0, :n + 1], jv[:n], u_v[:n])
        tu = LabeledTrajectory(np.arange(n + 1) * dt, Z[1, :n + 1], np.zeros(n, dtype=int),
                               u_u[:n] / u_scale)
        washout = min(int(s["washout"]), n // 2)
        fit_seed = int(rng.integers(2 ** 31))
        per_control = esn_fit(tv, res, washout=washout, beta=float(s["beta"]), m=len(v),
                              noise=float(s["noise"]), seed=fit_seed)
        augmented = esn_fit_augmented(tu, res, washout=washout, beta=float(s["beta"]),
                                      noise=float(s["noise"]), seed=fit_seed + 1)
        for kind, (ue, ze) in evals.items():
            weights = _interp_weights(ue[..., 0], v)
            un = ue / u_scale
            B = len(ze)
            R = np.zeros((B, res.n_r))
            Ra = np.zeros((B, res.n_r))
            for k in range(W - 1):
                R = res.update(R, ze[:, k])
                Ra = res.update(Ra, ze[:, k], un[:, k])
            z = za = ze[:, W - 1]
            pp, pa = [], []
            for k in range(W - 1, W - 1 + H):
                z, R = per_control.step(z, weights[:, k], R)
                za, Ra = augmented.step_controls(za, un[:, k], Ra)
                pp.append(z)
                pa.append(za)
            truth = ze[:, W:W + H]
            rows.append((n, kind, "per_control", float(np.mean(_rel_l2(np.stack(pp, 1), truth)))))
            rows.append((n, kind, "augmented", float(np.mean(_rel_l2(np.stack(pa, 1), truth)))))
    return rows


def _trial_job(args):
    study, variant, trial = args
    return variant["name"], trial, data_efficiency_trial(study, variant, trial)


def data_efficiency(study, workers=1):
    """All variants and trials; returns per-trial rows and per-cell statistics."""
    s = {**STUDY_DEFAULTS, **study}
    variants = []
    for i, v in enumerate(s["variants"]):
        v = dict(v)
        v.setdefault("name", f"{v['system']}_{i}")
        v["index"] = i
        variants.append(v)
    jobs = [(s, v, t) for v in variants for t in range(int(s["trials"]))]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    raw = [(name, trial, *row) for name, trial, rows in results for row in rows]
    cells = {}
    for name, _, n, kind, model, err in raw:
        cells.setdefault((name, n, kind, model), []).append(err)
    stats = [{"variant": name, "size": n, "eval": kind, "model": model,
              "mean": float(np.mean(e)), "std": float(np.std(e)), "trials": len(e)}
             for (name, n, kind, model), e in sorted(cells.items())]
    log.info("data-efficiency study: %d trials in %.1f s", len(jobs), time.perf_counter() - t0)
    return raw, stats


def cell(stats, variant, size, kind, model):
    for row in stats:
        if (row["variant"], row["size"], row["eval"], row["model"]) == (variant, size, kind, model):
            return row
    raise KeyError((variant, size, kind, model))


def write_data_efficiency(out_dir, raw, stats):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "data_efficiency_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "trial", "size", "eval", "model", "rel_l2_error"])
        w.writerows(raw)
    with open(out / "data_efficiency.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["variant", "size", "eval", "model", "mean", "std",
                                           "trials"])
        w.writeheader()
        w.writerows(stats)
    (out / "plot_data_efficiency.py").write_text(STUDY_PLOT)
    return out


STUDY_PLOT = '''"""Relative prediction error against training-set size, one panel per variant."""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv("data_efficiency.csv")
variants = list(dict.fromkeys(df["variant"]))
fig, axes = plt.subplots(1, len(variants), figsize=(5 * len(variants), 4), squeeze=False)
styles = {("per_control", "U"): "-", ("per_control", "V"): "--",
          ("augmented", "U"): "-", ("augmented", "V"): "--"}
colors = {"per_control": "tab:blue", "augmented": "tab:orange"}
for ax, name in zip(axes[0], variants):
    for (model, kind), ls in styles.items():
        d = df[(df.variant == name) & (df.model == model) & (df["eval"] == kind)]
        ax.errorbar(d["size"], d["mean"], yerr=d["std"], ls=ls, color=colors[model],
                    label=f"{model}, controls from {kind}", capsize=2)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_title(name)
    ax.set_xlabel("training samples")
    ax.set_ylabel("relative L2 error")
    ax.legend(fontsize="small")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "data_efficiency.png")
'''
