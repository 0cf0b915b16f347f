"""JSON persistence for fitted surrogates, shared schema with a ``kind`` field."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..dynamics import builtin_system
from ..errors import SchemaMismatch
from .base import InterpolatedEnsemble, OdeEnsemble
from .edmd import DictionarySpec, EdmdModel
from .esn import AugmentedEsnModel, EsnModel, Reservoir
from .pod import PerturbedModel, PodModel

FORMAT_VERSION = 1


def encode_array(a):
    a = np.asarray(a, dtype=float)
    # json writes floats with repr(), which round-trips exactly
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def decode_array(d):
    try:
        return np.array(d["data"], dtype=float).reshape(d["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaMismatch(f"bad array record: {exc}") from None


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _system_record(system):
    return {"name": system.name, "params": _plain(dict(system.params))}


def _reservoir_record(res):
    rec = {"W_res": encode_array(res.W_res), "W_fb": encode_array(res.W_fb),
           "sigma": res.sigma, "rho": res.rho}
    if res.W_in is not None:
        rec["W_in"] = encode_array(res.W_in)
    return rec


def _reservoir_from(rec):
    W_in = decode_array(rec["W_in"]) if "W_in" in rec else None
    return Reservoir(decode_array(rec["W_res"]), decode_array(rec["W_fb"]),
                     float(rec["sigma"]), float(rec["rho"]), W_in)


def model_to_dict(model):
    kind = model.kind
    rec = {"kind": kind, "format": FORMAT_VERSION}
    if kind == "edmd":
        rec.update(K=encode_array(model.K), q=model.q, max_degree=model.spec.max_degree,
                   include_constant=model.spec.include_constant,
                   propagate_lifted=model.propagate_lifted)
    elif kind in ("esn", "esn_augmented"):
        rec.update(reservoir=_reservoir_record(model.reservoir), W_out=encode_array(model.W_out),
                   beta=model.beta, window=model.window)
    elif kind in ("ode", "interpolated", "pod", "perturbed"):
        system = model.base_system if kind == "perturbed" else model.system
        rec.update(system=_system_record(system), points=encode_array(model.points),
                   dt=model.dt, substeps=model.substeps)
        if kind == "pod":
            rec["basis"] = encode_array(model.basis)
            rec["full_state"] = model.full_state
            rec["quadratic"] = model.coeffs is not None
        if kind == "perturbed":
            rec["offset"] = model.offset.tolist()
    else:
        raise SchemaMismatch(f"cannot serialise model kind {kind!r}")
    return rec


def model_from_dict(rec):
    try:
        kind = rec["kind"]
        if kind == "edmd":
            spec = DictionarySpec(int(rec["max_degree"]), bool(rec.get("include_constant", True)))
            return EdmdModel(decode_array(rec["K"]), spec, int(rec["q"]),
                             bool(rec.get("propagate_lifted", False)))
        if kind == "esn":
            return EsnModel(_reservoir_from(rec["reservoir"]), decode_array(rec["W_out"]),
                            float(rec["beta"]), int(rec.get("window", 20)))
        if kind == "esn_augmented":
            return AugmentedEsnModel(_reservoir_from(rec["reservoir"]), decode_array(rec["W_out"]),
                                     float(rec["beta"]), int(rec.get("window", 20)))
        if kind in ("ode", "interpolated", "pod", "perturbed"):
            system = builtin_system(rec["system"]["name"], rec["system"].get("params"))
            pts = decode_array(rec["points"])
            dt, sub = float(rec["dt"]), int(rec["substeps"])
            if kind == "pod":
                return PodModel(system, decode_array(rec["basis"]), pts, dt, sub,
                                bool(rec.get("full_state", True)),
                                bool(rec.get("quadratic", False)))
            if kind == "perturbed":
                return PerturbedModel(system, rec["offset"], pts, dt, sub)
            if kind == "interpolated":
                return InterpolatedEnsemble(system, pts, dt, sub)
            return OdeEnsemble(system, pts, dt, sub)
    except KeyError as exc:
        raise SchemaMismatch(f"model record lacks field {exc}") from None
    raise SchemaMismatch(f"unknown model kind {rec.get('kind')!r}")


def save_model(path, model):
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)
    return path


def load_model(path):
    with open(path) as fh:
        try:
            rec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(str(exc), line=exc.lineno) from None
    return model_from_dict(rec)
