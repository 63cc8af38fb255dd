"""JSON documents: models, scenes, results and solver configurations.

Floats are written with 17 significant digits so every 64-bit value
round-trips exactly.  Scenes use the pixel-space schema handled by
:mod:`posereg.observations`.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import InvalidConfig, SchemaError
from .geometry import ObjectModel, SymmetryPlane
from .observations import Scene, ingest_scene, pose_from_doc, pose_to_doc, serialize_scene
from .residuals import RobustBetas, RobustParams

NORMAL_TOL = 1e-6
FORMAT_VERSION = 1


# --- encoding ------------------------------------------------------------------

def _encode(obj, indent, level):
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," if indent else ", "
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"  # JSON has no inf/nan
        return f"{x:.17g}"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [pad + json.dumps(str(k)) + ": " + _encode(v, indent, level + 1) for k, v in obj.items()]
        return "{" + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric rows stay on one line
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, 0, 0) for v in obj) + "]"
        return "[" + sep.join(pad + _encode(v, indent, level + 1) for v in obj) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2) -> str:
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path):
    """Parse a UTF-8 JSON file; a missing file propagates FileNotFoundError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


# --- models ------------------------------------------------------------------------

def model_to_doc(model: ObjectModel) -> dict:
    return {
        "name": model.name,
        "keypoints": model.keypoints,
        "edges": model.edges,
        "symmetry": {"normal": model.symmetry.normal, "point": model.symmetry.point},
        "diameter": model.diameter,
        "surface_samples": model.surface_samples,
        "pose_ambiguity": bool(model.has_pose_ambiguity),
    }


def _points(doc, key, cols, required=True):
    if key not in doc or doc[key] is None:
        if required:
            raise SchemaError(f"model document missing '{key}'")
        return None
    try:
        a = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{key}: {exc}") from exc
    if a.size == 0:
        return np.zeros((0, cols))
    if a.ndim != 2 or a.shape[1] != cols or not np.all(np.isfinite(a)):
        raise SchemaError(f"{key} must be a list of finite {cols}-vectors")
    return a


def model_from_doc(doc) -> ObjectModel:
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    allowed = {"name", "keypoints", "edges", "symmetry", "diameter", "surface_samples", "pose_ambiguity", "schema"}
    extra = doc.keys() - allowed
    if extra:
        raise SchemaError(f"model document has unknown fields: {sorted(extra)}")
    kps = _points(doc, "keypoints", 3)
    if len(kps) < 1:
        raise SchemaError("model needs at least one keypoint")
    sym = doc.get("symmetry")
    if not isinstance(sym, dict):
        raise SchemaError("model document missing 'symmetry'")
    try:
        normal = np.array(sym["normal"], dtype=float).reshape(3)
        point = np.array(sym["point"], dtype=float).reshape(3)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad symmetry block: {exc}") from exc
    norm = np.linalg.norm(normal)
    if not abs(norm - 1.0) <= NORMAL_TOL:
        raise SchemaError(f"symmetry normal has length {norm}, not unit")
    surf = _points(doc, "surface_samples", 3, required=False)
    edges = doc.get("edges")
    if edges is not None:
        try:
            edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"edges: {exc}") from exc
    model = ObjectModel.build(kps, SymmetryPlane(normal / norm, point), surf, edges,
                              bool(doc.get("pose_ambiguity", False)), str(doc.get("name", "object")))
    if "diameter" in doc:
        try:
            d = float(doc["diameter"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"diameter: {exc}") from exc
        if not abs(d - model.diameter) <= 1e-9 * max(1.0, model.diameter):
            raise SchemaError(f"diameter {d} != max pairwise distance {model.diameter}")
    return model


def load_model(path) -> ObjectModel:
    return model_from_doc(read_json(path))


def load_scene(path, model: ObjectModel) -> Scene:
    return ingest_scene(read_json(path), model)


def save_scene(path, scene: Scene):
    write_json(path, serialize_scene(scene))


# --- solver configuration -------------------------------------------------------------

def betas_to_doc(betas: RobustBetas) -> dict:
    return {"k": [betas.k.beta1, betas.k.beta2], "e": [betas.e.beta1, betas.e.beta2],
            "s": [betas.s.beta1, betas.s.beta2]}


def betas_from_doc(doc) -> RobustBetas:
    try:
        return RobustBetas(*(RobustParams(float(doc[g][0]), float(doc[g][1])) for g in ("k", "e", "s")))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InvalidConfig(f"bad betas block: {exc}") from exc


def config_to_doc(alpha_e, alpha_s, betas: RobustBetas, **extra) -> dict:
    doc = {"alpha_e": alpha_e, "alpha_s": alpha_s, "betas": betas_to_doc(betas)}
    doc.update(extra)
    return doc


def config_from_doc(doc) -> dict:
    if not isinstance(doc, dict):
        raise InvalidConfig("config document must be a JSON object")
    try:
        out = {"alpha_e": float(doc.get("alpha_e", 1.0)), "alpha_s": float(doc.get("alpha_s", 1.0))}
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad alpha: {exc}") from exc
    out["betas"] = betas_from_doc(doc["betas"]) if "betas" in doc else RobustBetas()
    return out


# --- poses ----------------------------------------------------------------------------

def pose_from_any(doc):
    """A pose from a pose, result (refined, else init) or scene (ground truth) document."""
    if not isinstance(doc, dict):
        raise SchemaError("pose document must be a JSON object")
    for key in ("refined_pose", "init_pose", "gt_pose"):
        if doc.get(key) is not None:
            return pose_from_doc(doc[key])
    if "R" in doc:
        return pose_from_doc(doc)
    raise SchemaError("document holds no pose")


__all__ = [
    "dumps", "write_json", "read_json", "model_to_doc", "model_from_doc", "load_model", "load_scene",
    "save_scene", "betas_to_doc", "betas_from_doc", "config_to_doc", "config_from_doc", "pose_from_any",
    "pose_to_doc", "FORMAT_VERSION",
]
