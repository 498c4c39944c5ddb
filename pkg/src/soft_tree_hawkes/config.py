"""Run configuration: one YAML/JSON document validated against a JSON schema.

Unknown keys are rejected at every level so a typo cannot silently fall
back to a default.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

from .ingest import ConfigError

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_box = {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


MODEL_SCHEMA = _obj({
    "kind": {"enum": ["hawkes", "poisson", "self_correcting"]},
    "depth": {"type": "integer", "minimum": 0, "maximum": 10},
    "nu": _pos,
    # training starts from a random model unless init is "params"
    "init": {"enum": ["random", "params"]},
    # explicit parameters: the generating model for `simulate`, an initial point for `train`
    "tree": {"type": "array", "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}},
    "mu": {"type": "array", "items": _num},
    "gamma": {"type": "array", "items": _pos},
    "Gamma": {"type": "array", "items": {"type": "array", "items": _num}},
    "rate": _pos,
    "sc_mu": _pos,
    "sc_alpha": _pos,
})

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "region": _box,
    "data": _obj({
        "events": {"type": "string"},
        "catalog": {"type": "string"},
        "columns": _obj({"time": {"type": "string"}, "lat": {"type": "string"}, "lon": {"type": "string"}}),
        "time_format": {"type": "string"},
        "years": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        "normalization": _obj({
            "lat_range": _pair, "lon_range": _pair, "target": _box,
            "origin": {"type": ["string", "null"]}, "seconds_per_unit": _pos,
        }, required=("lat_range", "lon_range")),
        "split": _pair,
    }),
    "model": MODEL_SCHEMA,
    "simulate": _obj({"t_end": _pos, "resolution": {"type": "integer", "minimum": 2},
                      "max_events": _posint}, required=("t_end",)),
    "objective": _obj({
        "alpha": {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1}]},
        "n_negatives": _posint, "ll_tol": {"type": ["number", "null"]}, "max_iters": _posint,
        "batch_size": _posint, "lr": _pos, "patience": _posint,
        "horizons": {"type": "array", "items": _pos},
    }),
    "quadrature": _obj({"n_t": {"type": "integer", "minimum": 2}, "n_x": {"type": "integer", "minimum": 2},
                        "n_y": {"type": "integer", "minimum": 2}, "t_max": _pos}),
    "grid": _obj({"n_x": _posint, "n_y": _posint}),
    "predict": _obj({"horizon": _pos, "t_start": _num}),
    "evaluate": _obj({"horizons": {"type": "array", "items": _pos, "minItems": 1},
                      "next_event": {"type": "boolean"}}),
    "sweep": _obj({
        "variable": {"enum": ["horizon", "window", "depth", "mode"]},
        "values": {"type": "array", "minItems": 1},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "horizon_unit": _pos,
        "eval_horizons": {"type": "array", "items": _pos, "minItems": 1},
        "train_horizons": {"type": "array", "items": _pos, "minItems": 1},
    }, required=("variable", "values")),
})

DEFAULTS = {
    "seed": 0,
    "region": [-10.0, 10.0, -10.0, 10.0],
    "data": {"split": [0.7, 0.15]},
    "model": {"kind": "hawkes", "depth": 2, "nu": 4.0},
    "objective": {"alpha": 1.0, "n_negatives": 1024, "ll_tol": None, "max_iters": 5000,
                  "batch_size": 64, "lr": 0.01, "patience": 10},
    "quadrature": {"n_t": 64, "n_x": 64, "n_y": 64},
    "grid": {"n_x": 4, "n_y": 4},
    "evaluate": {"horizons": [1.0], "next_event": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else copy.deepcopy(v)
    return out


def validate(doc) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise ConfigError(f"config {where}: {e.message}")


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Read, validate and fill defaults. ``overrides`` replaces scalar top-level fields."""
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
    validate(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    if path is not None:
        cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def resolve(cfg: dict, rel: str) -> Path:
    """Paths in a config are relative to the config file's directory."""
    p = Path(rel)
    return p if p.is_absolute() or "_base" not in cfg else Path(cfg["_base"]) / p


def config_hash(cfg: dict) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()[:16]
