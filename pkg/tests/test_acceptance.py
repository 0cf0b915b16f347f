"""Acceptance criteria 1-11, each at its stated tolerance and runtime budget.

Every test records a ``PASS``/``FAIL`` line that is printed at the end of the
pytest run; ``python3 tests/test_acceptance.py`` runs them standalone.
"""
import itertools
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from quasimodo.bounds import (BoundsConfig, amplification, estimate_constants, gronwall_envelope,
                              verify_bounds_experiment)
from quasimodo.config import ExperimentConfig
from quasimodo.datagen import LabeledTrajectory, SnapshotPairs
from quasimodo.dynamics import SystemModel, TimeGrid, builtin_system, flow_map
from quasimodo.errors import MaxItersReached
from quasimodo.experiments import (cell, closed_loop, data_efficiency, generate, train)
from quasimodo.optimize import ObjectiveSpec, batch_objective, project_simplex, solve_relaxed
from quasimodo.quantization import BoxControlSet, QuantizedControlSet, SurAccumulator, sur_round
from quasimodo.surrogates import DictionarySpec, edmd_fit, edmd_predict

try:
    from conftest import ACCEPTANCE
except ImportError:  # standalone run
    ACCEPTANCE = {}

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(number, title, budget):
    """Time the block, record one result line, re-raise failures."""
    t0 = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - t0
        assert elapsed < budget, f"runtime {elapsed:.1f} s exceeds {budget} s"
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        ACCEPTANCE[number] = (f"FAIL  {number:2d}. {title} [{elapsed:.1f} s / {budget} s] "
                              f"{type(exc).__name__}: {exc}")
        print(ACCEPTANCE[number])
        raise
    info = " ".join(f"{k}={v}" for k, v in detail.items())
    ACCEPTANCE[number] = f"PASS  {number:2d}. {title} [{elapsed:.1f} s / {budget} s] {info}"
    print(ACCEPTANCE[number])


def fmt(x):
    return f"{x:.4g}"


def grid_zoom(f, dim, n=21, levels=40, keep=4):
    """Dense-grid minimization over [0, 1]^dim, re-gridding around the incumbent.

    ``f`` maps a (N, dim) block of points to values (inf where infeasible).
    Each level lays a full ``n^dim`` grid over the current window and shrinks
    the window to ``keep`` grid cells around the best point found so far.
    """
    unit = np.array(list(itertools.product(np.linspace(-1.0, 1.0, n), repeat=dim)))
    c, w = np.full(dim, 0.5), np.full(dim, 0.5)
    best_x, best_f = None, np.inf
    for _ in range(levels):
        pts = c + unit * w
        vals = f(pts)
        k = int(np.argmin(vals))
        if vals[k] <= best_f:
            best_x, best_f = pts[k], float(vals[k])
        c, w = best_x, w * 2.0 * keep / (n - 1)
    return best_x, best_f


# 1 -------------------------------------------------------------------------------

DYADIC = 2 ** 20


def test_01_sur_bound():
    with criterion(1, "SUR integrated deviation <= (m-1) dt", 5) as d:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(1000):
            m, p = int(rng.integers(1, 7)), int(rng.integers(1, 51))
            dt = float(rng.uniform(1e-3, 1.0))
            # dyadic weights sum to exactly one, so the comparison below needs no slack
            probs = rng.dirichlet(np.full(m, rng.choice([0.2, 1.0, 5.0])), size=p)
            alphas = np.array([rng.multinomial(DYADIC, pr) for pr in probs]) / DYADIC
            omegas, _, _ = sur_round(alphas, SurAccumulator.fresh(m, dt))
            dev = np.max(np.abs(np.cumsum(alphas - omegas, axis=0)))
            assert dev * dt <= (m - 1) * dt, (m, p, dt, dev)
            worst = max(worst, dev / max(m - 1, 1))
        d["worst_ratio"] = fmt(worst)


# 2 -------------------------------------------------------------------------------

def test_02_edmd_linear_exactness():
    with criterion(2, "EDMD recovers a stable linear map", 1) as d:
        rng = np.random.default_rng(2)
        A = rng.normal(size=(3, 3))
        A *= 0.9 / max(abs(np.linalg.eigvals(A)))
        Z = rng.normal(size=(3, 50))
        model = edmd_fit(SnapshotPairs({0: Z}, {0: A @ Z}, 1), DictionarySpec(1))
        probe = rng.normal(size=(20, 3))
        err = np.max(np.abs(edmd_predict(model, 0, probe) - probe @ A.T))
        assert err < 1e-8
        d["max_err"] = fmt(err)


# 3 -------------------------------------------------------------------------------

def projection_oracle(v):
    m = len(v)
    if m == 1:
        return np.ones(1)

    def f(X):
        full = np.c_[X, 1.0 - X.sum(axis=1)]
        return np.where((full < 0).any(axis=1), np.inf, np.sum((full - v) ** 2, axis=1))

    x, _ = grid_zoom(f, m - 1)
    return np.r_[x, 1.0 - x.sum()]


def test_03_projection_oracle():
    with criterion(3, "simplex projection matches dense-grid minimization", 30) as d:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(500):
            m = int(rng.integers(1, 5))
            v = rng.normal(scale=rng.choice([0.1, 1.0, 10.0]), size=m)
            err = np.max(np.abs(project_simplex(v) - projection_oracle(v)))
            assert err < 1e-6, (v, err)
            worst = max(worst, err)
        d["max_err"] = fmt(worst)


# 4 -------------------------------------------------------------------------------

class ToyEnsemble:
    """Two affine maps z -> A_j z + b_j blended by the relaxed weights."""
    window = 0
    m, q = 2, 2

    def __init__(self, A, b):
        self.A, self.b = A, b

    def step(self, Z, W, state=None):
        nxt = np.einsum("jqr,br->bjq", self.A, Z) + self.b[None]
        return np.einsum("bj,bjq->bq", W, nxt), state


def test_04_relaxed_solve_oracle():
    with criterion(4, "solve_relaxed reaches the grid optimum", 60) as d:
        rng = np.random.default_rng(4)
        worst = -np.inf
        for _ in range(50):
            p = int(rng.integers(1, 4))
            ens = ToyEnsemble(np.eye(2) + 0.3 * rng.normal(size=(2, 2, 2)),
                              rng.normal(size=(2, 2)))
            z0 = rng.normal(size=2)
            spec = ObjectiveSpec(np.diag(rng.uniform(0.1, 1.0, 2)), rng.normal(size=2), 0.1)

            def f(X):
                bad = ((X < 0) | (X > 1)).any(axis=1)
                Xc = np.clip(X, 0.0, 1.0)
                vals = batch_objective(ens, z0, np.stack([Xc, 1.0 - Xc], axis=-1), spec)
                return np.where(bad, np.inf, vals)

            _, J_grid = grid_zoom(f, p, n=41 if p < 3 else 21, levels=30)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", MaxItersReached)
                res = solve_relaxed(ens, z0, p, spec)
            assert res.J <= J_grid + 1e-4, (p, res.J, J_grid)
            worst = max(worst, res.J - J_grid)
        d["max(J-J_grid)"] = fmt(worst)


# 5 -------------------------------------------------------------------------------

def test_05_duffing_bounds():
    with criterion(5, "Duffing: no bound violations, E3 <= E2b, |y(T)| < 0.15", 120) as d:
        cfg = ExperimentConfig.load(CONFIGS / "duffing.yaml")
        from quasimodo.experiments import bounds_config
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MaxItersReached)
            rep = verify_bounds_experiment(bounds_config(cfg), raise_on_violation=False)
        assert rep.config["dt"] == 2e-3 and rep.config["eps"] == 0.1 and rep.config["T"] == 1.0
        assert not rep.violations, rep.violations[:3]
        assert np.all(rep.envelopes["E3"] <= rep.envelopes["E2b"])
        for mode in ("interpolate", "sur"):
            final = np.max(np.abs(rep.trajectories[mode][-1]))
            assert final < 0.15, (mode, final)
            d[f"|y(T)|_{mode}"] = fmt(final)
        d["violations"] = 0


# 6 -------------------------------------------------------------------------------

def test_06_gronwall():
    with criterion(6, "Gronwall envelope on perturbed Duffing pairs", 60) as d:
        eps, dt, n = 0.1, 2e-3, 500
        plant = builtin_system("duffing")
        pert = SystemModel("duffing_eps", lambda y, u: plant(y, u) + np.array([0.0, eps]),
                           2, 1)
        V = QuantizedControlSet([[-4.0], [4.0]], BoxControlSet([-4.0], [4.0]))
        L = estimate_constants(plant, V, n_traj=20, T_sample=1.0, dt=1e-2, seed=0,
                               y_box=((-1.5, -1.5), (1.5, 1.5))).L_g
        rng = np.random.default_rng(6)
        grid = TimeGrid(0.0, dt, n)
        t = grid.times[1:]
        worst = 0.0
        for _ in range(100):
            y0 = rng.uniform(-1.0, 1.0, 2)
            u = np.repeat(rng.uniform(-4.0, 4.0, size=(n // 25, 1)), 25, axis=0)
            gap = np.max(np.abs(flow_map(plant, y0, u, grid) - flow_map(pert, y0, u, grid)),
                         axis=1)
            env = gronwall_envelope(eps * t, 0.0, 1.1 * L, t)
            assert np.all(gap <= env)
            worst = max(worst, float(np.max(gap / env)))
        d["L_g"] = fmt(L)
        d["max gap/envelope"] = fmt(worst)


# 7 -------------------------------------------------------------------------------

def run_pipeline(name, seed=None):
    cfg = ExperimentConfig.load(CONFIGS / f"{name}.yaml")
    if seed is not None:
        cfg = cfg.with_seed(seed)
    model, report = train(cfg, generate(cfg))
    logs, summary = closed_loop(cfg, model)
    return cfg, report, logs, summary


def test_07_lorenz_tracking():
    with criterion(7, "Lorenz tracking: affine <= 0.3 both modes, cos SUR < interpolate",
                   300) as d:
        _, _, logs, s = run_pipeline("lorenz_affine")
        lg = logs["interpolate"]
        ref = 1.5 * np.sin(4 * np.pi * lg.times / 20.0)
        np.testing.assert_allclose(lg.references[:, 1], ref, atol=1e-12)
        assert lg.times[-1] == pytest.approx(20.0)
        for mode in ("interpolate", "sur"):
            err = s["modes"][mode]["mean_abs"]
            assert err <= 0.3, (mode, err)
            d[f"affine_{mode}"] = fmt(err)
        _, _, _, s = run_pipeline("lorenz_cos")
        e_int, e_sur = s["modes"]["interpolate"]["mean_abs"], s["modes"]["sur"]["mean_abs"]
        assert e_sur < e_int
        d["cos_interpolate"], d["cos_sur"] = fmt(e_int), fmt(e_sur)


# 8 -------------------------------------------------------------------------------

def test_08_mackey_glass():
    with criterion(8, "Mackey-Glass ESN holds y near 1 over the final half, 3 seeds", 180) as d:
        for seed in (0, 1, 2):
            cfg, _, logs, s = run_pipeline("mackey_glass", seed)
            lg = logs["interpolate"]
            half = lg.times >= lg.times[-1] / 2 - 1e-12
            err = float(np.mean(np.abs(lg.observables[half, 0] - 1.0)))
            assert err < 0.1, (seed, err)
            d[f"seed{seed}"] = fmt(err)


# 9 -------------------------------------------------------------------------------

def test_09_burgers():
    with criterion(9, "Burgers POD MPC: |y(T)| <= 25% uncontrolled, energy > 99.9%", 300) as d:
        cfg, report, logs, s = run_pipeline("burgers")
        assert cfg.section("model")["ell"] == 12
        assert report["energy"] > 0.999
        final = s["modes"]["interpolate"]["final_state_norm"]
        free = s["uncontrolled_final_state_norm"]
        assert final <= 0.25 * free, (final, free)
        d["energy"] = f"{report['energy']:.6f}"
        d["ratio"] = fmt(final / free)


# 10 ------------------------------------------------------------------------------

def test_10_data_efficiency():
    with criterion(10, "data efficiency: per-control <= augmented; off-bounds worse", 1800) as d:
        study = ExperimentConfig.load(CONFIGS / "data_efficiency.yaml").section("study")
        assert study["trials"] == 20
        _, stats = data_efficiency(study, workers=4)
        sizes = [n for n in study["sizes"] if n >= 1000]
        for n in sizes:
            per = cell(stats, "lorenz_affine", n, "V", "per_control")["mean"]
            aug = cell(stats, "lorenz_affine", n, "V", "augmented")["mean"]
            assert per <= aug, (n, per, aug)
            d[f"n{n}"] = f"{per:.3f}/{aug:.3f}"
        # same data-rich sizes as above; with 100 samples neither variant has learned
        # the dynamics yet and both sit near 0.85
        for n in sizes:
            on = cell(stats, "lorenz_cos", n, "U", "per_control")["mean"]
            off = cell(stats, "lorenz_cos_off_bounds", n, "U", "per_control")["mean"]
            assert off > on, (n, on, off)
            d[f"off/on@{n}"] = f"{off:.3f}/{on:.3f}"


# 11 ------------------------------------------------------------------------------

def test_11_amplification_limit():
    with criterion(11, "amplification factor tends to p", 1) as d:
        worst = 0.0
        for L in (0.1, 1.0, 10.0):
            for p in range(1, 11):
                err = abs(amplification(L, 1e-10, p) - p)
                assert err < 1e-6
                worst = max(worst, err)
        d["max_err"] = fmt(worst)


if __name__ == "__main__":
    import sys
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except Exception:  # noqa: BLE001 - the line is already recorded
                failed += 1
    print("\n".join(ACCEPTANCE[k] for k in sorted(ACCEPTANCE)))
    sys.exit(1 if failed else 0)
