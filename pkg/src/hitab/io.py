"""JSON file formats for networks, problems and reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from hitab.errors import InputError
from hitab.net import Layer, Network, activation


def _require(doc: dict, key: str, where: str) -> Any:
    if not isinstance(doc, dict) or key not in doc:
        raise InputError(f"{where}: missing {key!r}")
    return doc[key]


def _matrix(value, where: str) -> np.ndarray:
    try:
        m = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{where}: expected a numeric matrix") from None
    if m.ndim != 2:
        raise InputError(f"{where}: expected a matrix, got {m.ndim}-d data")
    return m


def _vector(value, where: str) -> np.ndarray:
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{where}: expected a numeric vector") from None
    if v.ndim != 1:
        raise InputError(f"{where}: expected a vector, got {v.ndim}-d data")
    return v


def network_from_dict(doc: dict) -> Network:
    layers_doc = _require(doc, "layers", "network")
    if not isinstance(layers_doc, list):
        raise InputError("network: 'layers' must be a list")
    layers = []
    for k, ld in enumerate(layers_doc):
        where = f"layers[{k}]"
        w = _matrix(_require(ld, "weights", where), f"{where}.weights")
        b = _vector(_require(ld, "bias", where), f"{where}.bias")
        act = activation(_require(ld, "activation", where))
        try:
            layers.append(Layer(w, b, act))
        except InputError as exc:
            raise InputError(f"{where}: {exc}") from None
    c = _vector(_require(doc, "out_vector", "network"), "out_vector")
    return Network(tuple(layers), c)


def network_to_dict(net: Network) -> dict:
    return {
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation.kind.value,
            }
            for layer in net.layers
        ],
        "out_vector": net.out_vector.tolist(),
    }


def load_json(path) -> Any:
    """Read a JSON file; malformed content is an input error, missing files an OSError."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def load_network(path) -> Network:
    return network_from_dict(load_json(path))


def save_network(net: Network, path) -> None:
    # json writes floats with the shortest round-trip repr
    Path(path).write_text(json.dumps(network_to_dict(net)) + "\n")


@dataclass
class Problem:
    center: np.ndarray
    norm: str
    radius: Optional[float] = None
    radii: Optional[np.ndarray] = None
    tolerance: float = 1e-3
    max_nodes: int = 1_000_000
    max_seconds: float = 3600.0
    bound_mode: str = "combined"
    batch_size: Optional[int] = None
    system: Optional[dict] = None
    steps: int = 1
    init: Optional[dict] = None
    sample_count: int = 1000
    trajectories: int = 1000
    obstacles: Optional[list] = None
    rotation_fit: str = "polar"


def problem_from_dict(doc: dict) -> Problem:
    if not isinstance(doc, dict):
        raise InputError("problem: expected a JSON object")
    norm = doc.get("norm", "linf")
    if norm not in ("l2", "linf"):
        raise InputError(f"problem: 'norm' must be 'l2' or 'linf', got {norm!r}")
    has_radius, has_radii = "radius" in doc, "radii" in doc
    center = _vector(doc["center"], "center") if "center" in doc else None
    prob = Problem(center=center, norm=norm)
    if center is not None:
        if has_radius == has_radii:
            raise InputError("problem: exactly one of 'radius' or 'radii' is required")
        if norm == "l2":
            if not has_radius:
                raise InputError("problem: norm 'l2' requires 'radius'")
            prob.radius = float(doc["radius"])
        else:
            if not has_radii:
                raise InputError("problem: norm 'linf' requires 'radii'")
            prob.radii = _vector(doc["radii"], "radii")
    for key, cast in (
        ("tolerance", float),
        ("max_nodes", int),
        ("max_seconds", float),
        ("bound_mode", str),
        ("batch_size", int),
        ("steps", int),
        ("sample_count", int),
        ("trajectories", int),
        ("rotation_fit", str),
    ):
        if key in doc:
            try:
                setattr(prob, key, cast(doc[key]))
            except (TypeError, ValueError):
                raise InputError(f"problem: {key!r} has invalid value {doc[key]!r}") from None
    prob.system = doc.get("system")
    prob.init = doc.get("init")
    prob.obstacles = doc.get("obstacles")
    return prob


def load_problem(path) -> Problem:
    return problem_from_dict(load_json(path))


def _fmt(x: Any) -> str:
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(v)}" for k, v in x.items()) + "}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    if isinstance(x, np.ndarray):
        return _fmt(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if x is None:
        return "null"
    return json.dumps(x)


def dumps_report(obj: Any) -> str:
    """Serialise a report with 17 significant digits per float; non-finite floats become null."""
    return _fmt(obj)
