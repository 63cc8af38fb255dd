"""Rigid motions, pinhole projection and the reflection-symmetry transform.

All 2D quantities used by the solvers are in normalized camera coordinates,
i.e. pixels already mapped through the inverse intrinsic matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import DepthNonPositive, IntrinsicsInvalid, SchemaError

MIN_DEPTH = 1e-9
_SMALL_ANGLE = 1e-8
_ORTHO_DRIFT = 1e-12


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _frozen(a, shape=None):
    a = np.array(a, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


def exp_so3(c) -> np.ndarray:
    """Rotation matrix ``exp([c]x)`` via Rodrigues' formula."""
    c = np.asarray(c, dtype=float).reshape(3)
    theta2 = float(c @ c)
    theta = np.sqrt(theta2)
    K = skew(c)
    if theta < _SMALL_ANGLE:
        # truncation error is O(theta^3)
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of :func:`exp_so3` for angles < pi)."""
    return _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def nearest_rotation(M) -> np.ndarray:
    """Closest proper rotation to ``M`` in the Frobenius norm (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        U[:, 2] = -U[:, 2]
    return U @ Vt


def is_rotation(R, tol=1e-12) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Pose:
    """Canonical-frame to camera-frame transform ``X_cam = R @ X + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(self.R, (3, 3)))
        object.__setattr__(self, "t", _frozen(self.t, (3,)))
        if not (np.all(np.isfinite(self.R)) and np.all(np.isfinite(self.t))):
            raise ValueError("pose contains non-finite entries")

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.t

    def as_vector(self) -> np.ndarray:
        """``(r1, r2, r3, t)`` with ``r_i`` the rows of R."""
        return np.concatenate([self.R.reshape(9), self.t])


@dataclass(frozen=True)
class LocalPoseDelta:
    """Tangent update: rotation part ``c`` (radians), translation part ``c_bar``."""

    c: np.ndarray = field(default_factory=lambda: np.zeros(3))
    c_bar: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen(self.c, (3,)))
        object.__setattr__(self, "c_bar", _frozen(self.c_bar, (3,)))

    @classmethod
    def from_vector(cls, v) -> LocalPoseDelta:
        v = np.asarray(v, dtype=float).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.c, self.c_bar])


def apply_delta(pose: Pose, delta: LocalPoseDelta) -> Pose:
    """``R <- exp([c]x) R``, ``t <- exp([c]x) t + c_bar``.

    The rotation acts on the whole camera-frame point ``R p + t``, so the
    projection Jacobians depend only on the projected coordinates and depth.
    For a pose with zero translation this is ``R <- exp([c]x) R, t <- c_bar``.
    """
    if not (np.any(delta.c) or np.any(delta.c_bar)):
        return pose
    E = exp_so3(delta.c)
    R = E @ pose.R
    if np.linalg.norm(R.T @ R - np.eye(3)) > _ORTHO_DRIFT:
        R = nearest_rotation(R)
    return Pose(R, E @ pose.t + delta.c_bar)


def delta_between(reference: Pose, pose: Pose) -> LocalPoseDelta:
    """Local coordinates of ``pose`` around ``reference`` (inverse of apply_delta)."""
    E = pose.R @ reference.R.T
    return LocalPoseDelta(log_so3(E), pose.t - E @ reference.t)


def project(pose: Pose, point):
    """Project one canonical-frame point; returns ``((x, y), Z)``."""
    X = pose.R @ np.asarray(point, dtype=float).reshape(3) + pose.t
    if not X[2] > MIN_DEPTH:
        raise DepthNonPositive(f"point depth {X[2]:.3e} is not positive")
    return X[:2] / X[2], X[2]


def project_points(pose: Pose, points):
    """Vectorized :func:`project` for an ``(N, 3)`` array."""
    X = pose.transform(np.asarray(points, dtype=float).reshape(-1, 3))
    Z = X[:, 2]
    if X.shape[0] and not np.all(Z > MIN_DEPTH):
        raise DepthNonPositive(f"minimum depth {Z.min():.3e} is not positive")
    return X[:, :2] / Z[:, None], Z


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise IntrinsicsInvalid("intrinsics must be finite")
        if not (self.fx > 0 and self.fy > 0):
            raise IntrinsicsInvalid("focal lengths must be positive")

    @classmethod
    def identity(cls) -> CameraIntrinsics:
        return cls(1.0, 1.0, 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_pixels(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], axis=-1)

    def from_pixels(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)


def normalize_pixel(intr: CameraIntrinsics, pixel) -> np.ndarray:
    """Homogeneous normalized coordinates ``((u-cx)/fx, (v-cy)/fy, 1)``."""
    u, v = np.asarray(pixel, dtype=float).reshape(2)
    return np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])


@dataclass(frozen=True)
class SymmetryPlane:
    normal: np.ndarray
    point: np.ndarray

    def __post_init__(self):
        n = _frozen(self.normal, (3,))
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("symmetry normal must be unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "point", _frozen(self.point, (3,)))

    @property
    def reflection(self):
        """``(R_s, t_s)`` such that ``reflect(x) == R_s @ x + t_s``."""
        nn = np.outer(self.normal, self.normal)
        return np.eye(3) - 2.0 * nn, 2.0 * nn @ self.point


def reflect(plane: SymmetryPlane, point) -> np.ndarray:
    """Mirror image of ``point`` (or an ``(N, 3)`` array) across ``plane``."""
    p = np.asarray(point, dtype=float)
    n = plane.normal
    dist = (p - plane.point) @ n
    return p - 2.0 * np.multiply.outer(dist, n)


def complete_graph(n: int) -> np.ndarray:
    return np.array(list(combinations(range(n), 2)), dtype=np.int64).reshape(-1, 2)


def point_set_diameter(points) -> float:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) < 2:
        return 0.0
    return float(pdist(points).max())


@dataclass(frozen=True)
class ObjectModel:
    """Canonical 3D template: keypoints, keypoint graph, symmetry plane, surface."""

    keypoints: np.ndarray
    edges: np.ndarray
    symmetry: SymmetryPlane
    diameter: float
    surface_samples: np.ndarray
    has_pose_ambiguity: bool = False
    name: str = "object"

    def __post_init__(self):
        kps = _frozen(self.keypoints).reshape(-1, 3)
        kps.setflags(write=False)
        object.__setattr__(self, "keypoints", kps)
        edges = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        surf = np.array(self.surface_samples, dtype=float).reshape(-1, 3)
        surf.setflags(write=False)
        object.__setattr__(self, "surface_samples", surf)
        k = len(kps)
        if len(edges) and (edges.min() < 0 or edges.max() >= k):
            raise SchemaError("edge index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise SchemaError("edge endpoints must differ")
        expected = point_set_diameter(np.vstack([kps, surf]))
        if not abs(float(self.diameter) - expected) <= 1e-9 * max(1.0, expected):
            raise SchemaError(f"diameter {self.diameter} != max pairwise distance {expected}")
        object.__setattr__(self, "diameter", float(self.diameter))

    @classmethod
    def build(cls, keypoints, symmetry: SymmetryPlane, surface_samples=None, edges=None,
              has_pose_ambiguity=False, name="object") -> ObjectModel:
        """Construct a model, defaulting to the complete keypoint graph and computing the diameter."""
        kps = np.asarray(keypoints, dtype=float).reshape(-1, 3)
        surf = np.zeros((0, 3)) if surface_samples is None else np.asarray(surface_samples, float).reshape(-1, 3)
        if edges is None:
            edges = complete_graph(len(kps))
        return cls(kps, edges, symmetry, point_set_diameter(np.vstack([kps, surf])), surf,
                   has_pose_ambiguity, name)

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_vectors(self) -> np.ndarray:
        """Canonical edge vectors ``p[e_t] - p[e_s]``."""
        return self.keypoints[self.edges[:, 1]] - self.keypoints[self.edges[:, 0]]
