"""Versioned text checkpoints.

Floats are written as decimal numbers with 17 significant digits, which
round-trips every double exactly, so save -> load -> save is byte-identical.
The tree is stored as its depth plus breadth-first ``(w_x, w_y, b)`` rows.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import SpatialRegion
from .ingest import NormalizationSpec
from .intensity import HawkesParams, Model, Poisson, SelfCorrecting
from .quadrature import QuadratureSpec
from .tree import DecisionTree

FORMAT_VERSION = 1
_MARK = "\x00f:"


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: Model
    region: SpatialRegion
    normalization: NormalizationSpec | None = None
    quadrature: QuadratureSpec | None = None
    training: dict = field(default_factory=dict)


def _floats(obj):
    if isinstance(obj, dict):
        return {k: _floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _floats(obj.tolist())
    if isinstance(obj, (bool, np.bool_)) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise CheckpointError(f"cannot store non-finite value {x}")
        return _MARK + format(x, "#.17g")
    raise CheckpointError(f"unsupported value {obj!r}")


def dumps(doc: dict) -> str:
    text = json.dumps(_floats(doc), indent=2, sort_keys=False)
    return re.sub(r'"\\u0000f:([^"]*)"', r"\1", text) + "\n"


def model_to_dict(model: Model) -> dict:
    t = model.tree
    out = {"nu": model.nu,
           "tree": {"depth": t.depth, "nodes": [[w[0], w[1], b] for w, b in zip(t.w, t.b)]}}
    k = model.kind
    if isinstance(k, HawkesParams):
        out.update(kind="hawkes", mu=k.mu, gamma_raw=k.gamma_raw, Gamma=k.Gamma)
    elif isinstance(k, Poisson):
        out.update(kind="poisson", rate=k.rate)
    else:
        out.update(kind="self_correcting", mu=k.mu, alpha=k.alpha)
    return out


def model_from_dict(d: dict) -> Model:
    nodes = np.asarray(d["tree"]["nodes"], dtype=float).reshape(-1, 3)
    tree = DecisionTree(int(d["tree"]["depth"]), nodes[:, :2], nodes[:, 2])
    kind = d["kind"]
    if kind == "hawkes":
        params = HawkesParams(d["mu"], d["gamma_raw"], d["Gamma"])
    elif kind == "poisson":
        params = Poisson(float(d["rate"]))
    elif kind == "self_correcting":
        params = SelfCorrecting(float(d["mu"]), float(d["alpha"]))
    else:
        raise CheckpointError(f"unknown intensity kind {kind!r}")
    return Model(tree, params, float(d["nu"]))


def to_dict(ck: Checkpoint) -> dict:
    r = ck.region
    q = ck.quadrature
    return {
        "format_version": FORMAT_VERSION,
        "model": model_to_dict(ck.model),
        "region": [r.x_lo, r.x_hi, r.y_lo, r.y_hi],
        "normalization": ck.normalization.to_dict() if ck.normalization else None,
        "quadrature": None if q is None else {"n_t": q.n_t, "n_x": q.n_x, "n_y": q.n_y, "t_max": q.t_max},
        "training": ck.training,
    }


def from_dict(d: dict) -> Checkpoint:
    version = d.get("format_version")
    if not isinstance(version, int):
        raise CheckpointError("checkpoint has no integer format_version")
    if version > FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format {version} is newer than supported ({FORMAT_VERSION})")
    try:
        q = d.get("quadrature")
        return Checkpoint(
            model=model_from_dict(d["model"]),
            region=SpatialRegion(*d["region"]),
            normalization=NormalizationSpec.from_dict(d["normalization"]) if d.get("normalization") else None,
            quadrature=QuadratureSpec(**q) if q else None,
            training=d.get("training") or {},
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def save(ck: Checkpoint, path) -> None:
    Path(path).write_text(dumps(to_dict(ck)))


def load(path) -> Checkpoint:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint: {exc}") from exc
    return from_dict(d)
