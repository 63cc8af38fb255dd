"""Observed 2D elements (keypoints, edge vectors, symmetry pairs) for one image.

Elements are stored as stacked arrays rather than per-element objects; the
per-element views (:class:`KeypointObs` etc.) are produced on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import CountMismatch, SchemaError
from .geometry import CameraIntrinsics, ObjectModel, Pose


class KeypointObs(NamedTuple):
    index: int
    image_point: np.ndarray


class EdgeObs(NamedTuple):
    edge_index: int
    vector: np.ndarray


class SymCorrObs(NamedTuple):
    q1: np.ndarray
    q2: np.ndarray


@dataclass(frozen=True)
class NoiseMeta:
    sigma_k: float = 0.0
    sigma_e: float = 0.0
    sigma_s: float = 0.0
    outlier_k: float = 0.0
    outlier_e: float = 0.0
    outlier_s: float = 0.0


def _ro(a, cols):
    a = np.array(a, dtype=float).reshape(-1, cols)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scene:
    """Observations in normalized camera coordinates.

    ``keypoints[k]`` observes model keypoint k, ``edges[e]`` observes model
    edge e and ``sym_q1[s], sym_q2[s]`` form one symmetry pair.
    """

    keypoints: np.ndarray
    edges: np.ndarray
    sym_q1: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    sym_q2: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics.identity)
    gt_pose: Optional[Pose] = None
    noise_meta: Optional[NoiseMeta] = None

    def __post_init__(self):
        for name, cols in (("keypoints", 2), ("edges", 2), ("sym_q1", 2), ("sym_q2", 2)):
            object.__setattr__(self, name, _ro(getattr(self, name), cols))
        if self.sym_q1.shape != self.sym_q2.shape:
            raise SchemaError("symmetry pair arrays differ in length")

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_sym(self) -> int:
        return len(self.sym_q1)

    def keypoint_obs(self):
        return [KeypointObs(i, p) for i, p in enumerate(self.keypoints)]

    def edge_obs(self):
        return [EdgeObs(i, v) for i, v in enumerate(self.edges)]

    def sym_obs(self):
        return [SymCorrObs(a, b) for a, b in zip(self.sym_q1, self.sym_q2)]

    def check_against(self, model: ObjectModel) -> None:
        if self.n_keypoints != model.n_keypoints:
            raise CountMismatch(f"scene has {self.n_keypoints} keypoints, model has {model.n_keypoints}")
        if self.n_edges != model.n_edges:
            raise CountMismatch(f"scene has {self.n_edges} edges, model has {model.n_edges}")

    def replace(self, **changes) -> Scene:
        kw = dict(keypoints=self.keypoints, edges=self.edges, sym_q1=self.sym_q1,
                  sym_q2=self.sym_q2, intrinsics=self.intrinsics, gt_pose=self.gt_pose,
                  noise_meta=self.noise_meta)
        kw.update(changes)
        return Scene(**kw)


def homogeneous(xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)


def ingest_scene(raw: dict, model: ObjectModel) -> Scene:
    """Convert a pixel-space scene document into a normalized :class:`Scene`.

    Raises SchemaError, CountMismatch or IntrinsicsInvalid.
    """
    required = {"intrinsics", "keypoints_2d", "edges_2d", "sym_corrs"}
    allowed = required | {"gt_pose", "noise_meta", "schema", "model"}
    if not isinstance(raw, dict):
        raise SchemaError("scene document must be a JSON object")
    missing = required - raw.keys()
    extra = raw.keys() - allowed
    if missing:
        raise SchemaError(f"scene document missing fields: {sorted(missing)}")
    if extra:
        raise SchemaError(f"scene document has unknown fields: {sorted(extra)}")

    intr_doc = raw["intrinsics"]
    try:
        intr = CameraIntrinsics(float(intr_doc["fx"]), float(intr_doc["fy"]),
                                float(intr_doc["cx"]), float(intr_doc["cy"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad intrinsics block: {exc}") from exc

    def arr(key, cols):
        try:
            a = np.array(raw[key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{key}: {exc}") from exc
        if a.size == 0:
            return np.zeros((0, cols))
        if a.ndim != 2 or a.shape[1] != cols or not np.all(np.isfinite(a)):
            raise SchemaError(f"{key} must be a list of finite {cols}-vectors")
        return a

    kp_px = arr("keypoints_2d", 2)
    ed_px = arr("edges_2d", 2)
    sy_px = arr("sym_corrs", 4)
    if len(kp_px) != model.n_keypoints:
        raise CountMismatch(f"{len(kp_px)} keypoints for a {model.n_keypoints}-keypoint model")
    if len(ed_px) != model.n_edges:
        raise CountMismatch(f"{len(ed_px)} edges for a {model.n_edges}-edge model")

    gt = None
    if raw.get("gt_pose") is not None:
        gt = pose_from_doc(raw["gt_pose"])
    meta = None
    if raw.get("noise_meta") is not None:
        try:
            meta = NoiseMeta(**raw["noise_meta"])
        except TypeError as exc:
            raise SchemaError(f"noise_meta: {exc}") from exc

    scale = np.array([intr.fx, intr.fy])
    return Scene(
        keypoints=intr.from_pixels(kp_px),
        edges=ed_px / scale,
        sym_q1=intr.from_pixels(sy_px[:, :2]),
        sym_q2=intr.from_pixels(sy_px[:, 2:]),
        intrinsics=intr,
        gt_pose=gt,
        noise_meta=meta,
    )


def serialize_scene(scene: Scene) -> dict:
    """Inverse of :func:`ingest_scene` (pixel-space document)."""
    intr = scene.intrinsics
    doc = {
        "intrinsics": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy},
        "keypoints_2d": intr.to_pixels(scene.keypoints).tolist(),
        "edges_2d": (scene.edges * np.array([intr.fx, intr.fy])).tolist(),
        "sym_corrs": np.hstack([intr.to_pixels(scene.sym_q1), intr.to_pixels(scene.sym_q2)]).tolist(),
    }
    if scene.gt_pose is not None:
        doc["gt_pose"] = pose_to_doc(scene.gt_pose)
    if scene.noise_meta is not None:
        doc["noise_meta"] = scene.noise_meta.__dict__.copy()
    return doc


def pose_to_doc(pose: Pose) -> dict:
    return {"R": pose.R.reshape(9).tolist(), "t": pose.t.tolist()}


def pose_from_doc(doc) -> Pose:
    try:
        R = np.array(doc["R"], dtype=float)
        t = np.array(doc["t"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad pose block: {exc}") from exc
    if R.size != 9 or t.size != 3:
        raise SchemaError("pose needs 9 rotation entries and 3 translation entries")
    R = R.reshape(3, 3)
    if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9 or abs(np.linalg.det(R) - 1) > 1e-9:
        raise SchemaError("pose rotation is not a proper rotation")
    return Pose(R, t)
