"""Synthetic objects and observations standing in for learned predictors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import FrustumViolation, InvalidConfig
from .geometry import ObjectModel, Pose, SymmetryPlane, project_points, reflect
from .observations import NoiseMeta, Scene


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic Gaussian noise (normalized units) per element type."""

    sigma_k: float = 0.0
    sigma_e: float = 0.0
    sigma_s: float = 0.0

    def __post_init__(self):
        if min(self.sigma_k, self.sigma_e, self.sigma_s) < 0:
            raise InvalidConfig("noise levels must be non-negative")

    @classmethod
    def uniform(cls, sigma: float) -> NoiseModel:
        return cls(sigma, sigma, sigma)


@dataclass(frozen=True)
class GenConfig:
    noise: NoiseModel = field(default_factory=NoiseModel)
    outlier_rates: tuple = (0.0, 0.0, 0.0)
    n_sym_corrs: int = 50
    z_min: float = 2.0  # in model diameters
    z_max: float = 6.0
    frustum: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if len(self.outlier_rates) != 3 or not all(0.0 <= r <= 1.0 for r in self.outlier_rates):
            raise InvalidConfig("outlier rates must be three fractions in [0, 1]")
        if not 0 < self.z_min <= self.z_max:
            raise InvalidConfig("need 0 < z_min <= z_max")
        if self.n_sym_corrs < 0:
            raise InvalidConfig("n_sym_corrs must be non-negative")

    def replace(self, **kw) -> GenConfig:
        d = dict(self.__dict__)
        d.update(kw)
        return GenConfig(**d)


def farthest_point_sample(points, n, start=0):
    points = np.asarray(points, dtype=float)
    n = min(n, len(points))
    chosen = [start]
    d = np.linalg.norm(points - points[start], axis=1)
    for _ in range(n - 1):
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(points - points[i], axis=1))
    return points[chosen]


def _box_surface(rng, center, half, n):
    """Uniform samples on the surface of an axis-aligned box."""
    half = np.asarray(half, dtype=float)
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]) * 2
    face_axis = rng.choice(3, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    pts[np.arange(n), face_axis] = rng.choice([-1.0, 1.0], size=n)
    return center + pts * half


def _ellipsoid_surface(rng, center, radii, n):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + d * np.asarray(radii, dtype=float)


def make_procedural_model(kind="box", n_keypoints=8, n_surface=512, seed=0, name=None) -> ObjectModel:
    """A mirror-symmetric (about x = 0) object from box/ellipsoid parts.

    Keypoints and surface samples are farthest-point samples of a dense
    surface sampling.  Coordinates are scaled so the diameter is about 1.
    """
    rng = np.random.default_rng(seed)
    if kind == "box":
        dense = np.vstack([
            _box_surface(rng, np.zeros(3), (0.35, 0.22, 0.15), 3000),
            _ellipsoid_surface(rng, np.array([0.0, 0.25, 0.12]), (0.12, 0.08, 0.1), 1200),
        ])
    elif kind == "ellipsoid":
        dense = np.vstack([
            _ellipsoid_surface(rng, np.zeros(3), (0.4, 0.25, 0.18), 3000),
            _ellipsoid_surface(rng, np.array([0.0, -0.22, 0.15]), (0.1, 0.1, 0.12), 1200),
        ])
    else:
        raise InvalidConfig(f"unknown procedural model kind {kind!r}")
    # mirror copy keeps the dense cloud exactly symmetric
    dense = np.vstack([dense, dense * np.array([-1.0, 1.0, 1.0])])
    surface = farthest_point_sample(dense, n_surface)
    keypoints = farthest_point_sample(dense, n_keypoints, start=int(np.argmax(dense[:, 2])))
    plane = SymmetryPlane(np.array([1.0, 0.0, 0.0]), np.zeros(3))
    return ObjectModel.build(keypoints, plane, surface, name=name or kind)


def sample_pose(model: ObjectModel, config: GenConfig, rng, max_tries=100) -> Pose:
    """Uniform rotation, depth in ``[z_min, z_max]`` diameters, object inside the frustum."""
    pts = np.vstack([model.keypoints, model.surface_samples])
    for _ in range(max_tries):
        R = _ScipyRotation.random(random_state=rng).as_matrix()
        z = rng.uniform(config.z_min, config.z_max) * model.diameter
        lateral = rng.uniform(-1.0, 1.0, size=2) * config.frustum * 0.5 * z
        pose = Pose(R, np.array([lateral[0], lateral[1], z]))
        try:
            xy, _ = project_points(pose, pts)
        except Exception:
            continue
        if np.all(np.abs(xy) <= config.frustum):
            return pose
    raise FrustumViolation("could not sample a pose inside the frustum")


def _outlier_mask(rng, n, rate):
    if rate <= 0 or n == 0:
        return np.zeros(n, dtype=bool)
    k = int(round(rate * n))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def generate_scene(model: ObjectModel, gt_pose: Pose, config: GenConfig, rng=None) -> Scene:
    """Noisy keypoints, edge vectors and symmetry pairs observed at ``gt_pose``.

    ``rng`` may be a Generator; otherwise one is seeded from ``config.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    kp, _ = project_points(gt_pose, model.keypoints)
    if config.n_sym_corrs and not len(model.surface_samples):
        raise InvalidConfig("symmetry pairs need surface samples")
    n_sym = config.n_sym_corrs
    idx = rng.choice(len(model.surface_samples), size=n_sym, replace=n_sym > len(model.surface_samples)) \
        if n_sym else np.zeros(0, dtype=int)
    q_a = model.surface_samples[idx]
    q_b = reflect(model.symmetry, q_a)
    swap = rng.random(n_sym) < 0.5
    q1_3d = np.where(swap[:, None], q_b, q_a)
    q2_3d = np.where(swap[:, None], q_a, q_b)
    q1, _ = project_points(gt_pose, q1_3d)
    q2, _ = project_points(gt_pose, q2_3d)
    bound = config.frustum
    for name, xy in (("keypoints", kp), ("symmetry points", q1), ("symmetry points", q2)):
        if len(xy) and np.any(np.abs(xy) > bound):
            raise FrustumViolation(f"{name} project outside the +-{bound} frustum")

    edges = kp[model.edges[:, 1]] - kp[model.edges[:, 0]]
    nz = config.noise
    kp_obs = kp + rng.normal(scale=nz.sigma_k, size=kp.shape) if nz.sigma_k else kp.copy()
    ed_obs = edges + rng.normal(scale=nz.sigma_e, size=edges.shape) if nz.sigma_e else edges.copy()
    q2_obs = q2 + rng.normal(scale=nz.sigma_s, size=q2.shape) if nz.sigma_s else q2.copy()

    allpts = np.vstack([kp, q1, q2])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    rk, re, rs = config.outlier_rates
    m = _outlier_mask(rng, len(kp_obs), rk)
    kp_obs[m] = rng.uniform(lo, hi, size=(m.sum(), 2))
    m = _outlier_mask(rng, len(ed_obs), re)
    ed_obs[m] = rng.uniform(lo, hi, size=(m.sum(), 2)) - rng.uniform(lo, hi, size=(m.sum(), 2))
    m = _outlier_mask(rng, n_sym, rs)
    q2_obs[m] = rng.uniform(lo, hi, size=(m.sum(), 2))

    meta = NoiseMeta(nz.sigma_k, nz.sigma_e, nz.sigma_s, rk, re, rs)
    return Scene(kp_obs, ed_obs, q1, q2_obs, gt_pose=gt_pose, noise_meta=meta)


def generate_scenes(model: ObjectModel, n: int, config: GenConfig):
    """``n`` scenes from one seeded stream; scene i depends only on (seed, i)."""
    scenes = []
    for i in range(n):
        rng = np.random.default_rng([config.seed, i])
        pose = sample_pose(model, config, rng)
        scenes.append(generate_scene(model, pose, config, rng))
    return scenes
