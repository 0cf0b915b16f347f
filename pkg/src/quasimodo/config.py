"""YAML experiment configuration: parsing, validation and the objects built from it."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .datagen import ObservableSpec
from .dynamics import builtin_system
from .errors import ConfigError, QuasimodoError
from .mpc import MODES, MpcConfig
from .optimize import ObjectiveSpec, SolverConfig
from .quantization import BoxControlSet, QuantizedControlSet, make_star_set, make_vertex_set

SECTIONS = ("name", "system", "quantization", "data", "model", "mpc", "bounds", "study",
            "output")
MODEL_KINDS = ("edmd", "esn", "pod", "perturbed")


def _require(d, key, path):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    return d[key]


def _number(value, path, positive=False, integer=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(path, "must be positive")
    if nonneg and value < 0:
        raise ConfigError(path, "must be nonnegative")
    return int(value) if integer else float(value)


def _divides(small, large, path):
    r = large / small
    if abs(r - round(r)) > 1e-9 * max(1.0, r) or round(r) < 1:
        raise ConfigError(path, f"{small} does not divide {large}")
    return int(round(r))


class ExperimentConfig:
    """Validated view over the raw nested document (kept in ``raw`` for round trips)."""

    def __init__(self, raw, source=None):
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown section")
        self.raw = copy.deepcopy(raw)
        self.source = source
        self.validate()

    # --- construction ------------------------------------------------------

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(str(path), f"cannot read: {exc.strerror}") from None
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"invalid YAML: {exc}") from None
        return cls(raw, source=path)

    def dump(self):
        return yaml.safe_dump(self.raw, sort_keys=False)

    @classmethod
    def loads(cls, text):
        return cls(yaml.safe_load(text))

    def digest(self):
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_seed(self, seed):
        raw = copy.deepcopy(self.raw)
        for section in ("data", "study", "bounds"):
            if section in raw:
                raw[section]["seed"] = int(seed)
        return ExperimentConfig(raw, self.source)

    @property
    def name(self):
        return self.raw.get("name", "experiment")

    def section(self, key):
        return self.raw.get(key) or {}

    # --- validation --------------------------------------------------------

    def validate(self):
        if "system" in self.raw:
            self.system()
        if "quantization" in self.raw:
            self.control_sets()
        if "data" in self.raw:
            self._check_data()
        if "model" in self.raw:
            self._check_model()
        if "mpc" in self.raw:
            self.mpc_config()
            self.objective()
        if "study" in self.raw:
            self._check_study()
        if "bounds" in self.raw and not isinstance(self.raw["bounds"], dict):
            raise ConfigError("bounds", "must be a mapping")

    def system(self):
        sec = self.raw.get("system")
        name = _require(sec, "name", "system")
        try:
            return builtin_system(name, sec.get("params"))
        except QuasimodoError as exc:
            raise ConfigError("system", str(exc)) from None

    def control_sets(self):
        sec = _require(self.raw, "quantization", "")
        U_sec = _require(sec, "U", "quantization")
        lo = np.atleast_1d(np.asarray(_require(U_sec, "lower", "quantization.U"), dtype=float))
        hi = np.atleast_1d(np.asarray(_require(U_sec, "upper", "quantization.U"), dtype=float))
        try:
            U = BoxControlSet(lo, hi)
        except QuasimodoError as exc:
            raise ConfigError("quantization.U", str(exc)) from None
        if "system" in self.raw and U.dim != self.system().n_u:
            raise ConfigError("quantization.U", f"dimension {U.dim} does not match the plant "
                                                f"input dimension {self.system().n_u}")
        V_sec = _require(sec, "V", "quantization")
        try:
            if "points" in V_sec:
                V = QuantizedControlSet(np.asarray(V_sec["points"], dtype=float), U)
            else:
                rule = V_sec.get("rule", "vertices")
                if rule == "vertices":
                    V = make_vertex_set(U)
                elif rule == "star":
                    V = make_star_set(U)
                else:
                    raise ConfigError("quantization.V.rule", f"unknown rule {rule!r}")
        except ConfigError:
            raise
        except QuasimodoError as exc:
            raise ConfigError("quantization.V", str(exc)) from None
        return U, V

    def _check_data(self):
        sec = self.raw["data"]
        dt = _number(_require(sec, "dt", "data"), "data.dt", positive=True)
        T = _number(_require(sec, "T_train", "data"), "data.T_train", positive=True)
        _divides(dt, T, "data.T_train")
        _number(sec.get("substeps", 1), "data.substeps", positive=True, integer=True)
        _number(sec.get("seed", 0), "data.seed", integer=True, nonneg=True)
        hold = _number(sec.get("holdout", 0.1), "data.holdout", nonneg=True)
        if hold >= 1:
            raise ConfigError("data.holdout", "must be below 1")
        if "y0" in sec and sec["y0"] is not None and "system" in self.raw:
            if np.size(sec["y0"]) != self.system().n_y:
                raise ConfigError("data.y0", "dimension does not match the plant")
        self.observable()

    def observable(self):
        spec = self.section("data").get("observable") or {}
        try:
            obs = ObservableSpec.from_dict(spec)
        except (QuasimodoError, KeyError, TypeError) as exc:
            raise ConfigError("data.observable", str(exc)) from None
        if obs.kind == "coordinates" and "system" in self.raw:
            n_y = self.system().n_y
            if max(obs.indices) >= n_y:
                raise ConfigError("data.observable.indices", f"index out of range for n_y={n_y}")
        return obs

    def _check_model(self):
        sec = self.raw["model"]
        kind = _require(sec, "kind", "model")
        if kind not in MODEL_KINDS:
            raise ConfigError("model.kind", f"must be one of {MODEL_KINDS}")
        if kind == "edmd":
            _number(sec.get("max_degree", 1), "model.max_degree", positive=True, integer=True)
        if kind == "esn":
            _number(sec.get("n_r", 200), "model.n_r", positive=True, integer=True)
            sp = _number(sec.get("sparsity", 0.9), "model.sparsity", nonneg=True)
            if sp >= 1:
                raise ConfigError("model.sparsity", "must be below 1")
            _number(sec.get("beta", 1e-4), "model.beta", nonneg=True)
        if kind == "pod":
            ell = _number(_require(sec, "ell", "model"), "model.ell", positive=True, integer=True)
            if "system" in self.raw and ell > self.system().n_y:
                raise ConfigError("model.ell", "exceeds the state dimension")
        if "substeps" in sec:
            _number(sec["substeps"], "model.substeps", positive=True, integer=True)

    def mpc_config(self):
        sec = self.raw["mpc"]
        try:
            solver = SolverConfig(**(sec.get("solver") or {}))
        except TypeError as exc:
            raise ConfigError("mpc.solver", str(exc)) from None
        except QuasimodoError as exc:
            raise ConfigError("mpc.solver", str(exc)) from None
        mode = sec.get("mode", "both")
        if mode not in MODES:
            raise ConfigError("mpc.mode", f"must be one of {MODES}")
        p = _number(_require(sec, "p", "mpc"), "mpc.p", positive=True, integer=True)
        dt = _number(_require(sec, "dt", "mpc"), "mpc.dt", positive=True)
        T = _number(_require(sec, "T_mpc", "mpc"), "mpc.T_mpc", positive=True)
        dt_sur = _number(sec.get("dt_sur", dt), "mpc.dt_sur", positive=True)
        _divides(dt_sur, dt, "mpc.dt_sur")
        if "data" in self.raw and abs(dt - float(self.raw["data"]["dt"])) > 1e-12:
            raise ConfigError("mpc.dt", "must equal the surrogate step data.dt")
        try:
            return MpcConfig(p=p, dt=dt, T_mpc=T, dt_sur=dt_sur, mode=mode,
                             plant_substeps=_number(sec.get("plant_substeps", 1),
                                                    "mpc.plant_substeps", positive=True,
                                                    integer=True),
                             warm_start=sec.get("warm_start", "shift"),
                             sur_reset=bool(sec.get("sur_reset", False)), solver=solver)
        except ConfigError:
            raise
        except QuasimodoError as exc:
            raise ConfigError("mpc", str(exc)) from None

    def objective(self):
        sec = self.raw["mpc"]
        dt = float(sec["dt"])
        Q = sec.get("Q", "identity")
        q = None
        if "system" in self.raw:
            q = self.observable().dim(self.system().n_y) if "data" in self.raw else \
                self.system().n_y
        if isinstance(Q, str):
            if Q != "identity" or q is None:
                raise ConfigError("mpc.Q", "expected a matrix, a diagonal list or 'identity'")
            Q = np.eye(q)
        else:
            Q = np.asarray(Q, dtype=float)
            Q = np.diag(Q) if Q.ndim == 1 else Q
        if q is not None and Q.shape != (q, q):
            raise ConfigError("mpc.Q", f"must be {q}x{q} to match the observable")
        reference = self._reference(sec.get("reference", {"kind": "constant", "value": 0.0}),
                                    Q.shape[0])
        try:
            return ObjectiveSpec(Q, reference, dt)
        except QuasimodoError as exc:
            raise ConfigError("mpc.Q", str(exc)) from None

    @staticmethod
    def _reference(ref, q):
        kind = ref.get("kind", "constant")
        if kind == "constant":
            value = np.broadcast_to(np.asarray(ref.get("value", 0.0), dtype=float), (q,)).copy()
            return value
        if kind == "sine":
            amp = _number(ref.get("amplitude", 1.0), "mpc.reference.amplitude")
            period = _number(_require(ref, "period", "mpc.reference"), "mpc.reference.period",
                             positive=True)
            comp = _number(ref.get("component", 0), "mpc.reference.component", integer=True,
                           nonneg=True)
            if comp >= q:
                raise ConfigError("mpc.reference.component", "out of range")

            def sine(t):
                out = np.zeros(q)
                out[comp] = amp * np.sin(2.0 * np.pi * t / period)
                return out
            return sine
        raise ConfigError("mpc.reference.kind", f"unknown reference {kind!r}")

    def _check_study(self):
        sec = self.raw["study"]
        for key in ("T_data", "dt", "horizon"):
            _number(_require(sec, key, "study"), f"study.{key}", positive=True)
        _divides(sec["dt"], sec["T_data"], "study.T_data")
        _divides(sec["dt"], sec["horizon"], "study.horizon")
        n_max = int(round(sec["T_data"] / sec["dt"]))
        sizes = _require(sec, "sizes", "study")
        if not sizes or any(int(s) != s or s < 2 or s > n_max for s in sizes):
            raise ConfigError("study.sizes", f"sizes must be integers in [2, {n_max}]")
        _number(sec.get("trials", 20), "study.trials", positive=True, integer=True)
        variants = _require(sec, "variants", "study")
        if not isinstance(variants, list) or not variants:
            raise ConfigError("study.variants", "needs at least one variant")
        for i, v in enumerate(variants):
            path = f"study.variants[{i}]"
            if _require(v, "system", path) not in ("lorenz_affine", "lorenz_cos"):
                raise ConfigError(f"{path}.system", "must be lorenz_affine or lorenz_cos")
            lo, hi = (float(x) for x in _require(v, "U", path))
            pts = np.asarray(_require(v, "V", path), dtype=float).reshape(-1)
            if not lo < hi:
                raise ConfigError(f"{path}.U", "lower bound must be below upper bound")
            if len(pts) != 2 or np.any(pts < lo) or np.any(pts > hi) or pts[0] >= pts[1]:
                raise ConfigError(f"{path}.V", "needs two increasing points inside U")


def build_manifest(config, command, seed, extra=None):
    """Run manifest: enough to regenerate every artifact of one command."""
    import platform
    import sys

    import scipy

    from . import __version__
    return {"command": command, "config_name": config.name, "config_sha256": config.digest(),
            "config": config.raw, "seed": seed,
            "versions": {"quasimodo": __version__, "python": sys.version.split()[0],
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "pyyaml": yaml.__version__, "platform": platform.platform()},
            **(extra or {})}
