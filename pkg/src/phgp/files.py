"""JSON documents for trajectories, snapshots, models and reports.

Floats are written with ``repr``, which round-trips binary64 exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import jsonschema
import numpy as np

from .config import FORMAT_VERSION, ConfigError
from .rollout import Trajectory
from .train import TrainingSet


class FormatError(ConfigError):
    pass


_num = {"type": "number"}
_vec = {"type": "array", "items": _num}
_mat = {"type": "array", "items": _vec}

_SCHEMAS = {
    "trajectory": {
        "required": ["source", "times", "states", "inputs", "outputs", "hamiltonian", "power_balance", "config"],
        "properties": {
            "source": {"enum": ["ground_truth", "posterior"]},
            "times": _vec, "states": _mat, "inputs": _mat, "outputs": _mat, "hamiltonian": _vec,
            "power_balance": {"type": ["object", "null"]},
            "config": {"type": "object"},
        },
    },
    "snapshots": {
        "required": ["count", "dim", "n_obs", "times", "states", "inputs", "derivs", "noise_std", "seed", "config"],
        "properties": {
            "count": {"type": "integer", "minimum": 0},
            "dim": {"type": "integer", "minimum": 1},
            "n_obs": {"type": "integer", "minimum": 0},
            "times": _vec, "states": _mat, "inputs": _mat, "derivs": _mat,
            "noise_std": _num,
            "seed": {"type": "integer"},
            "config": {"type": "object"},
        },
    },
    "model": {
        "required": [
            "basis", "variant", "param_count", "param_names", "theta", "init_theta",
            "nlml", "init_nlml", "iterations", "message", "history", "training_data", "config",
        ],
        "properties": {
            "basis": {"type": "object"},
            "variant": {"enum": ["exact", "display"]},
            "param_count": {"type": "integer"},
            "param_names": {"type": "array", "items": {"type": "string"}},
            "theta": _vec, "init_theta": _vec,
            "nlml": _num, "init_nlml": _num,
            "iterations": {"type": "integer"},
            "message": {"type": "string"},
            "history": _vec,
            "training_data": {
                "type": "object",
                "required": ["path", "sha256"],
                "properties": {"path": {"type": "string"}, "sha256": {"type": "string"}},
            },
            "config": {"type": "object"},
        },
    },
    "report": {"required": [], "properties": {}},
}


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, allow_nan=False, ensure_ascii=False) + "\n"


def write_document(path, kind: str, payload: dict) -> Path:
    doc = {"format_version": FORMAT_VERSION, "kind": kind}
    doc.update(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps(doc), encoding="utf-8")
    os.replace(tmp, path)
    return path


def read_document(path, kind: str) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"{path}: file not found") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a readable JSON document ({exc})") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    if doc.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} document, found {doc.get('kind')!r}")
    schema = dict(_SCHEMAS[kind], type="object")
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"{path}: invalid {kind} document at {where}: {exc.message}") from None
    return doc


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _arr(doc, key, shape_tail=None):
    a = np.asarray(doc[key], dtype=float)
    if shape_tail is not None and (a.ndim != 1 + len(shape_tail) or a.shape[1:] != shape_tail):
        if not (a.size == 0 and len(doc[key]) == 0):
            raise FormatError(f"field {key!r} has shape {a.shape}")
        a = a.reshape((0,) + shape_tail)
    return a


def power_stats(traj: Trajectory) -> dict | None:
    res = traj.diagnostics.get("power_residual")
    if res is None or len(res) == 0:
        return None
    res = np.asarray(res)
    out = {
        "steps": int(res.size),
        "dt": float(traj.diagnostics["dt"]),
        "max": float(res.max()),
        "mean": float(res.mean()),
        "rms": float(np.sqrt(np.mean(res**2))),
    }
    defect = traj.diagnostics.get("power_defect")
    if defect is not None:
        out["max_cumulative_drift"] = float(np.max(np.abs(np.cumsum(defect))))
    return out


def trajectory_payload(traj: Trajectory, source: str, config: dict, stats: dict | None) -> dict:
    return {
        "source": source,
        "times": traj.times.tolist(),
        "states": traj.states.tolist(),
        "inputs": traj.inputs.tolist(),
        "outputs": traj.outputs.tolist(),
        "hamiltonian": traj.hamiltonian.tolist(),
        "power_balance": stats,
        "config": config,
    }


def load_trajectory(path) -> tuple[Trajectory, dict]:
    doc = read_document(path, "trajectory")
    try:
        traj = Trajectory(
            _arr(doc, "times"), _arr(doc, "states"), _arr(doc, "inputs"), _arr(doc, "outputs"), _arr(doc, "hamiltonian")
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return traj, doc


def snapshots_payload(ts: TrainingSet, noise_std: float, seed: int, config: dict) -> dict:
    return {
        "count": ts.count,
        "dim": ts.dim,
        "n_obs": ts.n_obs,
        "times": ts.times.tolist(),
        "states": ts.states.tolist(),
        "inputs": ts.inputs.tolist(),
        "derivs": ts.derivs.tolist(),
        "noise_std": float(noise_std),
        "seed": int(seed),
        "config": config,
    }


def load_snapshots(path) -> tuple[TrainingSet, dict]:
    doc = read_document(path, "snapshots")
    d = doc["dim"]
    try:
        ts = TrainingSet(
            _arr(doc, "times"), _arr(doc, "states", (d,)), _arr(doc, "inputs", (2,)), _arr(doc, "derivs", (d,))
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if ts.count != doc["count"] or ts.n_obs != doc["n_obs"]:
        raise FormatError(f"{path}: record count does not match header")
    return ts, doc
