"""Run configuration: defaults, JSON schema and construction of module objects."""

from __future__ import annotations

import copy
import hashlib
import json
import math

import jsonschema
import numpy as np

from .coefficients import builtin_sigma, read_sigma_table
from .errors import ConfigError
from .ldp import OptimizerParams, TargetSet
from .skeleton import Control, SkeletonConfig
from .spectral import DomainConfig, SpectralField

EXPERIMENTS = ("simulate", "skeleton", "rate-function", "mc-estimate", "condition-a",
               "condition-b", "verify-inequalities", "convergence-study")

DEFAULTS = {
    "experiment": None,
    "seed": 0,
    "output_dir": "logldp-out",
    "domain": {"L": math.pi, "n_modes": 16, "n_quad": None, "d": 1, "dealias": True},
    "sigma": {"kind": "linear", "value": 1.0, "table": None},
    "solver": {"dt": 1e-3, "T": 0.5, "scheme": "exp_euler", "oracle_mode": "full",
               "overflow_guard": 1e12, "record_every": 1},
    "initial": {"coeffs": [1.0, 0.5]},
    "control": {"K": 10, "value": 0.0, "values": None},
    "ensemble": {"n_paths": 64, "eps": [0.4, 0.2, 0.1, 0.05], "chunk_size": 64, "delta": None,
                 "dump_paths": False, "max_dump_values": 10_000_000},
    "target": {"kind": "terminal_norm_above", "r": 1.0, "g": None, "c": 0.0, "center": None},
    "optimizer": {"enabled": True, "K": 32, "n_starts": 8, "start_scale": 1.0, "penalty_start": 1.0,
                  "penalty_factor": 10.0, "penalty_max": 1e6, "feas_tol": 1e-4, "max_iter": 2000,
                  "gtol": 1e-10, "check_gradients": False},
    "mc": {"n_paths": 100_000, "eps": [0.4, 0.3, 0.2], "chunk_size": 1024, "confidence": 0.95},
    "condition_b": {"amplitude": 1.0, "eps": [0.2, 0.1, 0.05, 0.025], "N": None},
    "inequalities": {"n_fields": 1000, "eps": [1e-3, 1e-2, 1e-1, 1.0], "alpha": [0.5, 0.9, 0.99],
                     "tolerance": 1e-8, "h_grid_half_width": 100.0, "h_grid_points": 201},
    "convergence": {"dt_list": [4e-3, 2e-3, 1e-3, 5e-4], "eps": 0.0, "n_paths": 8},
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nullnum = {"type": ["number", "null"]}
_numlist = {"type": "array", "items": _num}
_poslist = {"type": "array", "items": _pos, "minItems": 1}


def _obj(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = _obj({
    "experiment": {"type": ["string", "null"], "enum": [*EXPERIMENTS, None]},
    "seed": {"type": "integer", "minimum": 0},
    "output_dir": {"type": "string"},
    "domain": _obj({"L": _pos, "n_modes": _posint, "n_quad": {"type": ["integer", "null"], "minimum": 1},
                    "d": _posint, "dealias": {"type": "boolean"}}),
    "sigma": _obj({"kind": {"enum": ["constant", "linear", "sqrt_log", "table"]},
                   "value": _nullnum, "table": {"type": ["string", "null"]}}),
    "solver": _obj({"dt": _pos, "T": _pos, "scheme": {"enum": ["exp_euler", "imex_euler"]},
                    "oracle_mode": {"enum": ["full", "heat_only", "reaction_only"]},
                    "overflow_guard": _pos, "record_every": _posint}),
    "initial": _obj({"coeffs": _numlist}),
    "control": _obj({"K": _posint, "value": _num, "values": {"type": ["array", "null"], "items": _num}}),
    "ensemble": _obj({"n_paths": _posint, "eps": _poslist, "chunk_size": _posint,
                      "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                      "dump_paths": {"type": "boolean"}, "max_dump_values": _posint}),
    "target": _obj({"kind": {"enum": ["terminal_norm_above", "terminal_halfspace", "terminal_ball"]},
                    "r": {"type": "number", "minimum": 0}, "c": _num,
                    "g": {"type": ["array", "null"], "items": _num},
                    "center": {"type": ["array", "null"], "items": _num}}),
    "optimizer": _obj({"enabled": {"type": "boolean"}, "K": _posint, "n_starts": _posint,
                       "start_scale": {"type": "number", "minimum": 0}, "penalty_start": _pos,
                       "penalty_factor": {"type": "number", "exclusiveMinimum": 1}, "penalty_max": _pos,
                       "feas_tol": _pos, "max_iter": _posint, "gtol": {"type": "number", "minimum": 0},
                       "check_gradients": {"type": "boolean"}}),
    "mc": _obj({"n_paths": _posint, "eps": _poslist, "chunk_size": _posint,
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
    "condition_b": _obj({"amplitude": {"type": "number", "minimum": 0}, "eps": _poslist,
                         "N": {"type": ["number", "null"], "exclusiveMinimum": 0}}),
    "inequalities": _obj({"n_fields": _posint, "eps": _poslist,
                          "alpha": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0,
                                                               "exclusiveMaximum": 1}, "minItems": 1},
                          "tolerance": {"type": "number", "minimum": 0},
                          "h_grid_half_width": _pos, "h_grid_points": {"type": "integer", "minimum": 2}}),
    "convergence": _obj({"dt_list": {"type": "array", "items": _pos, "minItems": 3},
                         "eps": {"type": "number", "minimum": 0}, "n_paths": _posint}),
})


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve(raw: dict) -> dict:
    """Validate ``raw`` (unknown keys rejected) and fill every default explicitly."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(raw, SCHEMA)
        cfg = _merge(DEFAULTS, raw)
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    return cfg


def load(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return raw


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _pad(values, n, what):
    v = np.zeros(n)
    values = list(values or [])
    if len(values) > n:
        raise ConfigError(f"{what} has {len(values)} entries but n_modes = {n}")
    v[: len(values)] = values
    return v


def build_domain(cfg) -> DomainConfig:
    try:
        return DomainConfig(**cfg["domain"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_sigma(cfg):
    s = cfg["sigma"]
    if s["kind"] == "table":
        if not s["table"]:
            raise ConfigError("sigma.table path required for kind 'table'")
        try:
            return read_sigma_table(s["table"])
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"cannot read sigma table: {exc}") from None
    return builtin_sigma(s["kind"], s["value"])


def build_skeleton(cfg, dom=None) -> SkeletonConfig:
    dom = dom or build_domain(cfg)
    s = cfg["solver"]
    return SkeletonConfig(dom, build_sigma(cfg), dt=s["dt"], T=s["T"], scheme=s["scheme"],
                          oracle_mode=s["oracle_mode"], overflow_guard=s["overflow_guard"])


def build_u0(cfg, dom) -> SpectralField:
    return SpectralField(_pad(cfg["initial"]["coeffs"], dom.n_modes, "initial.coeffs"), dom)


def build_control(cfg, sk: SkeletonConfig) -> Control:
    c = cfg["control"]
    if c["values"] is not None:
        if not c["values"]:
            raise ConfigError("control.values must be nonempty")
        h = Control(np.asarray(c["values"], dtype=float), sk.T)
    else:
        h = Control.constant(c["value"], c["K"], sk.T)
    if sk.n_steps % h.K:
        raise ConfigError(f"control pieces K={h.K} must divide n_steps={sk.n_steps}")
    return h


def build_target(cfg, dom) -> TargetSet:
    t = cfg["target"]
    if t["kind"] == "terminal_norm_above":
        return TargetSet.norm_above(t["r"])
    if t["kind"] == "terminal_halfspace":
        g = _pad(t["g"], dom.n_modes, "target.g")
        if not np.any(g):
            raise ConfigError("target.g must be a nonzero vector")
        return TargetSet.halfspace(g, t["c"])
    return TargetSet.ball(_pad(t["center"], dom.n_modes, "target.center"), t["r"])


def build_optimizer(cfg, seed) -> OptimizerParams:
    o = {k: v for k, v in cfg["optimizer"].items() if k != "enabled"}
    return OptimizerParams(seed=seed, **o)
