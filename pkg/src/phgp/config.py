"""Experiment configuration: schema, defaults and builders."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import jsonschema
import numpy as np

from .fem import FemSpace, QuadratureRule, uniform_mesh
from .hyper import HyperBasis, HyperParams
from .train import OptimizeOptions
from .wave import PhSystem, assemble_system, make_law

FORMAT_VERSION = 1


class ConfigError(ValueError):
    pass


_func = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "family": {"enum": ["polynomial", "constant"]},
        "coeffs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "value": {"type": "number"},
    },
}

_signal = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["zero", "constant", "sine"]},
        "amplitude": {"type": "number"},
        "angular_frequency": {"type": "number"},
        "phase": {"type": "number"},
        "value": {"type": "number"},
    },
}

_basis = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "node_count"],
            "properties": {"kind": {"const": "p1"}, "node_count": {"type": "integer", "minimum": 2}},
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "degree"],
            "properties": {"kind": {"const": "legendre"}, "degree": {"type": "integer", "minimum": 0}},
        },
    ]
}


def _obj(props: dict, required=None) -> dict:
    return {
        "type": "object",
        "additionalProperties": False,
        "required": list(props) if required is None else required,
        "properties": props,
    }


_pos = {"type": "number", "exclusiveMinimum": 0}
_int1 = {"type": "integer", "minimum": 1}

SCHEMA = _obj(
    {
        "format_version": {"const": FORMAT_VERSION},
        "mesh": _obj({"node_count": {"type": "integer", "minimum": 2}, "length": _pos}),
        "material": _obj(
            {"T": _func, "c": _func, "rho": _func, "nu": _func, "nonlinearity": {"enum": ["gauss-exp", "none"]}}
        ),
        "input": _obj({"u_L": _signal, "u_R": _signal}),
        "simulation": _obj(
            {
                "t_final": _pos,
                "dt": _pos,
                "record_every": _int1,
                "newton_tol": _pos,
                "newton_max_iter": _int1,
            },
            required=["t_final", "dt"],
        ),
        "training": _obj(
            {"snapshots": _int1, "noise_std": {"type": "number", "minimum": 0}, "seed": {"type": "integer"}},
            required=["snapshots"],
        ),
        "hyper_basis": _basis,
        "optimizer": _obj(
            {
                "max_iter": {"type": "integer", "minimum": 0},
                "gtol": _pos,
                "starts": _int1,
                "seed": {"type": "integer"},
                "frozen": {"type": "array", "items": {"type": "string"}},
                "init": _obj(
                    {"m": {"type": "number"}, "lam": {"type": "number", "minimum": 0}, "sigma_f": _pos, "sigma_n": _pos},
                    required=[],
                ),
            },
            required=[],
        ),
        "rollout": _obj({"rtol": _pos, "atol": _pos}, required=[]),
    },
    required=["format_version", "mesh", "material", "input", "simulation", "training", "hyper_basis"],
)

DEFAULTS = {
    "simulation": {"record_every": 10, "newton_tol": 1e-12, "newton_max_iter": 50},
    "training": {"noise_std": 0.0, "seed": 0},
    "optimizer": {
        "max_iter": 500,
        "gtol": 1e-6,
        "starts": 1,
        "seed": 0,
        "frozen": [],
        "init": {"m": 1.0, "lam": 1.0, "sigma_f": 1.0, "sigma_n": 1e-2},
    },
    "rollout": {"rtol": 1e-6, "atol": 1e-8},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _function(spec: dict, name: str):
    if spec["family"] == "constant":
        if "value" not in spec:
            raise ConfigError(f"material.{name}: constant family needs 'value'")
        value = float(spec["value"])
        return lambda x: np.full(np.shape(x), value)
    if "coeffs" not in spec:
        raise ConfigError(f"material.{name}: polynomial family needs 'coeffs'")
    poly = np.polynomial.Polynomial(np.asarray(spec["coeffs"], dtype=float))
    return lambda x: poly(np.asarray(x, dtype=float))


def _signal_fn(spec: dict):
    kind = spec["kind"]
    if kind == "zero":
        return lambda t: 0.0
    if kind == "constant":
        value = float(spec.get("value", 0.0))
        return lambda t: value
    amp = float(spec.get("amplitude", 1.0))
    om = float(spec.get("angular_frequency", math.pi))
    ph = float(spec.get("phase", 0.0))
    return lambda t: amp * math.sin(om * t + ph)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        cfg = cls(data)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def _check(self):
        sim = self.data["simulation"]
        n = round(sim["t_final"] / sim["dt"])
        if n < 1 or abs(n * sim["dt"] - sim["t_final"]) > 1e-9 * max(1.0, sim["t_final"]):
            raise ConfigError("simulation.t_final must be a whole number of time steps")
        for name in ("T", "c", "rho", "nu"):
            _function(self.data["material"][name], name)
        x = np.linspace(0.0, self.length, 201)
        if np.any(_function(self.data["material"]["rho"], "rho")(x) <= 0):
            raise ConfigError("material.rho must be positive on the domain")

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def length(self) -> float:
        return float(self.data["mesh"]["length"])

    @property
    def t_final(self) -> float:
        return float(self.data["simulation"]["t_final"])

    @property
    def dt(self) -> float:
        return float(self.data["simulation"]["dt"])

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def material_function(self, name: str):
        return _function(self.data["material"][name], name)

    def law(self):
        m = self.data["material"]
        return make_law(
            self.material_function("T"),
            self.material_function("c"),
            self.material_function("rho"),
            self.material_function("nu"),
            nonlinearity=m["nonlinearity"],
        )

    def system(self) -> PhSystem:
        mesh = uniform_mesh(self.data["mesh"]["node_count"], self.length)
        space = FemSpace(mesh)
        return assemble_system(space, space, self.law(), QuadratureRule(5))

    def input_fn(self):
        fl = _signal_fn(self.data["input"]["u_L"])
        fr = _signal_fn(self.data["input"]["u_R"])
        return lambda t: np.array([fl(t), fr(t)])

    def sample_times(self) -> np.ndarray:
        """Recording grid shared by stored ground truth and rollouts."""
        stride = self.data["simulation"]["record_every"]
        idx = np.arange(0, self.n_steps + 1, stride)
        if idx[-1] != self.n_steps:
            idx = np.append(idx, self.n_steps)
        return idx * self.dt

    def basis(self, override: str | None = None) -> HyperBasis:
        if override:
            try:
                return HyperBasis.parse(override, self.length)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad --basis value {override!r}: {exc}") from None
        d = dict(self.data["hyper_basis"], length=self.length)
        return HyperBasis.from_dict(d)

    def initial_hyperparams(self, basis: HyperBasis) -> HyperParams:
        init = self.data["optimizer"]["init"]
        return HyperParams.initial(basis, init["m"], init["lam"], init["sigma_f"], init["sigma_n"])

    def optimize_options(self, starts: int | None = None, max_iter: int | None = None) -> OptimizeOptions:
        o = self.data["optimizer"]
        return OptimizeOptions(
            max_iter=o["max_iter"] if max_iter is None else max_iter,
            gtol=o["gtol"],
            starts=o["starts"] if starts is None else starts,
            seed=o["seed"],
            frozen=tuple(o["frozen"]),
        )
