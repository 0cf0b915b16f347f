"""Training data: random quantized actuation, observables, per-control buckets, CSV I/O."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import DelayHistory, TimeGrid, flow_map
from .errors import EmptyBucket, InvalidParam, SchemaMismatch, SequenceTooShort

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObservableSpec:
    """``kind`` is ``full_state``, ``coordinates`` or ``delay``.

    A delay embedding stacks ``lags + 1`` copies of its base observable spaced
    ``lag_step`` samples apart, newest first.
    """
    kind: str = "full_state"
    indices: tuple = ()
    base: Optional["ObservableSpec"] = None
    lags: int = 0
    lag_step: int = 1

    def __post_init__(self):
        if self.kind not in ("full_state", "coordinates", "delay"):
            raise InvalidParam(f"unknown observable kind {self.kind!r}")
        if self.kind == "coordinates" and not self.indices:
            raise InvalidParam("coordinate selection needs indices")
        if self.lags < 0 or self.lag_step < 1:
            raise InvalidParam("lags must be >= 0 and lag_step >= 1")

    @classmethod
    def coordinates(cls, indices):
        return cls("coordinates", tuple(int(i) for i in indices))

    @classmethod
    def delay(cls, base=None, lags=1, lag_step=1):
        return cls("delay", base=base or cls(), lags=lags, lag_step=lag_step)

    def dim(self, n_y):
        if self.kind == "full_state":
            return n_y
        if self.kind == "coordinates":
            return len(self.indices)
        return self.base.dim(n_y) * (self.lags + 1)

    @property
    def history(self):
        """Number of past samples (besides the current one) the observable needs."""
        return self.lags * self.lag_step if self.kind == "delay" else 0

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "coordinates":
            d["indices"] = list(self.indices)
        if self.kind == "delay":
            d.update(base=self.base.to_dict(), lags=self.lags, lag_step=self.lag_step)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.get("kind", "full_state")
        if kind == "coordinates":
            return cls.coordinates(d["indices"])
        if kind == "delay":
            return cls.delay(cls.from_dict(d.get("base", {})), d.get("lags", 1), d.get("lag_step", 1))
        return cls()


def apply_observable(states, spec):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if spec.kind == "full_state":
        return states.copy()
    if spec.kind == "coordinates":
        if max(spec.indices) >= states.shape[1] or min(spec.indices) < -states.shape[1]:
            raise InvalidParam(f"observable indices {spec.indices} out of range")
        return states[:, list(spec.indices)]
    z = apply_observable(states, spec.base)
    span = spec.lags * spec.lag_step
    if len(z) <= span:
        raise SequenceTooShort(f"need more than {span} samples for this delay embedding, got {len(z)}")
    n = len(z) - span
    return np.concatenate([z[span - k * spec.lag_step: span - k * spec.lag_step + n]
                           for k in range(spec.lags + 1)], axis=1)


def _as_rows(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == n:
        return a
    if a.size == 0:
        return a.reshape(n, 0)
    return a.reshape(n, -1)


@dataclass
class LabeledTrajectory:
    """Observable samples with the control index active on each interval.

    ``control_indices[i]`` (0-based) labels the step from ``observables[i]`` to
    ``observables[i + 1]``.
    """
    times: np.ndarray
    observables: np.ndarray
    control_indices: np.ndarray
    controls_applied: np.ndarray
    states: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        n = len(self.times)
        self.observables = _as_rows(self.observables, n)
        self.control_indices = np.asarray(self.control_indices, dtype=int).reshape(-1)
        self.controls_applied = _as_rows(self.controls_applied, len(self.control_indices))
        if n and len(self.control_indices) != n - 1:
            raise InvalidParam("controls must be one shorter than the states")
        if n == 0 and len(self.control_indices):
            raise InvalidParam("empty trajectory cannot carry controls")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParam("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def q(self):
        return self.observables.shape[1]

    def split(self, holdout=0.1):
        """Split into training and held-out tails; the tail keeps its first sample shared."""
        n = len(self)
        cut = max(2, int(round(n * (1.0 - holdout))))
        cut = min(cut, n - 1) if n > 2 else n
        head = LabeledTrajectory(self.times[:cut], self.observables[:cut],
                                 self.control_indices[:cut - 1], self.controls_applied[:cut - 1],
                                 None if self.states is None else self.states[:cut], dict(self.meta))
        tail = LabeledTrajectory(self.times[cut - 1:], self.observables[cut - 1:],
                                 self.control_indices[cut - 1:], self.controls_applied[cut - 1:],
                                 None if self.states is None else self.states[cut - 1:], dict(self.meta))
        return head, tail


@dataclass
class SnapshotPairs:
    """Per control index: inputs ``Z[j]`` and successors ``Zn[j]`` as (q, n_j) matrices."""
    Z: dict
    Zn: dict
    m: int

    def sizes(self):
        return {j: self.Z[j].shape[1] for j in range(self.m)}

    def total(self):
        return sum(self.sizes().values())


def generate_training_data(system, V, dt_model, T_train, substeps=1, seed=0,
                           y0=None, observable=None, t0=0.0):
    """Simulate the plant under i.i.d. uniformly drawn controls from ``V``."""
    steps = T_train / dt_model
    n = int(round(steps))
    if n < 1 or abs(steps - n) > 1e-9 * max(1.0, steps):
        raise InvalidParam(f"dt_model={dt_model} must divide T_train={T_train}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, V.m, size=n)
    controls = V.points[idx]
    y0 = np.array(system.default_y0 if y0 is None else y0, dtype=float)
    grid = TimeGrid(t0, dt_model, n)
    history = DelayHistory.constant(y0, t0, system.delay) if system.delay is not None else None
    ys = flow_map(system, y0, controls, grid, substeps, history)
    states = np.vstack([y0[None, :], ys])
    spec = observable or ObservableSpec()
    z = apply_observable(states, spec)
    drop = spec.history
    meta = {"system": system.name, "params": _jsonable(system.params), "V": V.points.tolist(),
            "dt": dt_model, "T_train": T_train, "substeps": substeps, "seed": seed,
            "y0": y0.tolist(), "observable": spec.to_dict()}
    log.info("generated %d samples of %s (seed %s)", len(z), system.name, seed)
    return LabeledTrajectory(grid.times[drop:], z, idx[drop:], controls[drop:],
                             states[drop:], meta)


def partition_by_control(traj, m=None):
    m = int(m if m is not None else (traj.control_indices.max() + 1 if len(traj.control_indices) else 0))
    Z, Zn = {}, {}
    for j in range(m):
        sel = np.flatnonzero(traj.control_indices == j)
        Z[j] = traj.observables[sel].T.copy()
        Zn[j] = traj.observables[sel + 1].T.copy()
        if len(sel) == 0:
            warnings.warn(f"control index {j} received no data", EmptyBucket, stacklevel=2)
    return SnapshotPairs(Z, Zn, m)


# --- persistence -------------------------------------------------------------

def _fmt(x):
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_dataset(path, traj, meta=None):
    """Write ``t, z_1..z_q, j, u_1..u_nu`` rows; the terminal row has blank j/u.

    ``j`` is written 1-based.  A JSON sidecar holds the run metadata.
    """
    path = Path(path)
    q = traj.observables.shape[1]
    nu = traj.controls_applied.shape[1] or int(traj.meta.get("n_u", 1))
    header = ["t"] + [f"z_{k + 1}" for k in range(q)] + ["j"] + [f"u_{k + 1}" for k in range(nu)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(traj)):
            row = [_fmt(traj.times[i])] + [_fmt(v) for v in traj.observables[i]]
            if i < len(traj.control_indices):
                row += [str(int(traj.control_indices[i]) + 1)]
                row += [_fmt(v) for v in traj.controls_applied[i]]
            else:
                row += [""] * (1 + nu)
            w.writerow(row)
    sidecar = dict(traj.meta)
    sidecar.update(meta or {})
    sidecar.update(q=q, n_u=nu, rows=len(traj))
    with open(_sidecar(path), "w") as fh:
        json.dump(_jsonable(sidecar), fh, indent=2)
    return path


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_dataset(path):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaMismatch("missing header", line=1)
    header = rows[0]
    if not header or header[0] != "t" or "j" not in header:
        raise SchemaMismatch(f"unexpected header {header}", line=1)
    jcol = header.index("j")
    q = jcol - 1
    nu = len(header) - jcol - 1
    expect_z = [f"z_{k + 1}" for k in range(q)]
    expect_u = [f"u_{k + 1}" for k in range(nu)]
    if header[1:jcol] != expect_z or header[jcol + 1:] != expect_u:
        raise SchemaMismatch(f"unexpected header {header}", line=1)
    times, zs, js, us = [], [], [], []
    body = rows[1:]
    for k, row in enumerate(body):
        line = k + 2
        if len(row) != len(header):
            raise SchemaMismatch(f"expected {len(header)} columns, got {len(row)}", line=line)
        try:
            times.append(float(row[0]))
            zs.append([float(v) for v in row[1:jcol]])
            if row[jcol] == "":
                if k != len(body) - 1:
                    raise SchemaMismatch("only the last row may omit the control", line=line)
            else:
                js.append(int(row[jcol]) - 1)
                us.append([float(v) for v in row[jcol + 1:]])
        except ValueError as exc:
            raise SchemaMismatch(str(exc), line=line) from None
    if body and len(js) != len(body) - 1:
        raise SchemaMismatch("the last row must omit the control", line=len(body) + 1)
    meta = {}
    side = _sidecar(path)
    if side.exists():
        with open(side) as fh:
            meta = json.load(fh)
    return LabeledTrajectory(np.array(times), np.array(zs).reshape(len(times), q),
                             np.array(js, dtype=int), np.array(us).reshape(len(js), nu), None, meta)
