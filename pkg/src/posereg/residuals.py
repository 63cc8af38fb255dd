"""Constraint residuals, the German-McClure weight, the robust objective and
closed-form Jacobians with respect to the local pose delta and observation noise.

Sign convention for the projection residuals: ``predicted - observed``.
Jacobians are taken with respect to ``(c, c_bar)`` in
``R <- exp([c]x) R``, ``t <- t + c_bar`` at the pose they are evaluated at.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .geometry import ObjectModel, Pose, project_points
from .observations import Scene, homogeneous


@dataclass(frozen=True)
class RobustParams:
    beta1: float = 1.0
    beta2: float = 0.05

    def __post_init__(self):
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("robust parameters must be positive")

    @property
    def peak(self) -> float:
        """Weight at zero residual, ``beta1^2 / beta2^2``."""
        return self.beta1 ** 2 / self.beta2 ** 2


class RobustBetas(NamedTuple):
    k: RobustParams = RobustParams()
    e: RobustParams = RobustParams()
    s: RobustParams = RobustParams()

    def as_array(self) -> np.ndarray:
        return np.array([self.k.beta1, self.k.beta2, self.e.beta1, self.e.beta2,
                         self.s.beta1, self.s.beta2])

    @classmethod
    def from_array(cls, a) -> RobustBetas:
        a = np.asarray(a, dtype=float).reshape(6)
        return cls(RobustParams(a[0], a[1]), RobustParams(a[2], a[3]), RobustParams(a[4], a[5]))

    @classmethod
    def quadratic(cls, scale: float = 1e4) -> RobustBetas:
        """Near-quadratic limit: ``beta1 = beta2`` large, so every weight is ~1."""
        p = RobustParams(scale, scale)
        return cls(p, p, p)


@dataclass(frozen=True)
class ElementCovariances:
    """Per-element 2x2 weight matrices for keypoint and edge residuals."""

    sigma_k: np.ndarray
    sigma_e: np.ndarray

    @classmethod
    def identity(cls, n_keypoints: int, n_edges: int) -> ElementCovariances:
        return cls(np.tile(np.eye(2), (n_keypoints, 1, 1)), np.tile(np.eye(2), (n_edges, 1, 1)))

    def __post_init__(self):
        for name in ("sigma_k", "sigma_e"):
            m = np.array(getattr(self, name), dtype=float).reshape(-1, 2, 2)
            if not np.allclose(m, np.swapaxes(m, 1, 2), atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if len(m) and np.any(np.linalg.eigvalsh(m)[:, 0] <= 0):
                raise ValueError(f"{name} must be positive definite")
            m.setflags(write=False)
            object.__setattr__(self, name, m)


def default_covs(model: ObjectModel, covs: Optional[ElementCovariances]) -> ElementCovariances:
    return covs if covs is not None else ElementCovariances.identity(model.n_keypoints, model.n_edges)


@dataclass(frozen=True)
class ResidualStack:
    keypoint: np.ndarray
    edge: np.ndarray
    symmetry: np.ndarray
    tag: str

    def max_abs(self) -> float:
        parts = [np.abs(a).ravel() for a in (self.keypoint, self.edge, self.symmetry)]
        return float(np.max(np.concatenate(parts + [np.zeros(1)])))


@dataclass(frozen=True)
class JacobianStack:
    """Rows are residual components; ``*_x`` w.r.t. ``(c, c_bar)``, ``*_y`` w.r.t. noise."""

    keypoint_x: np.ndarray  # (K, 2, 6)
    keypoint_y: np.ndarray  # (K, 2, 2)
    edge_x: np.ndarray  # (E, 2, 6)
    edge_y: np.ndarray  # (E, 2, 2)
    sym_x: np.ndarray  # (S, 6), translation columns zero
    sym_y: np.ndarray  # (S, 2)


def _sym_cross(scene: Scene) -> np.ndarray:
    return np.cross(homogeneous(scene.sym_q1), homogeneous(scene.sym_q2))


def symmetry_residuals(pose: Pose, model: ObjectModel, scene: Scene) -> np.ndarray:
    """``(q1^ x q2^) . (R n)``; independent of the translation."""
    return _sym_cross(scene) @ (pose.R @ model.symmetry.normal)


def cross_residuals(pose: Pose, model: ObjectModel, scene: Scene) -> ResidualStack:
    """Cross-product residuals, linear in ``(R, t)``."""
    R, t = pose.R, pose.t
    p_hat = homogeneous(scene.keypoints)
    kp = np.cross(p_hat, model.keypoints @ R.T + t)
    es, et = model.edges[:, 0], model.edges[:, 1]
    v_hat = np.concatenate([scene.edges, np.zeros((scene.n_edges, 1))], axis=1)
    edge = (np.cross(v_hat, model.keypoints[et] @ R.T + t)
            + np.cross(p_hat[es], model.edge_vectors @ R.T))
    return ResidualStack(kp, edge, symmetry_residuals(pose, model, scene), "cross")


def projection_residuals(pose: Pose, model: ObjectModel, scene: Scene) -> ResidualStack:
    """Reprojection residuals for keypoints and edges; the symmetry block is the cross form."""
    proj, _ = project_points(pose, model.keypoints)
    kp = proj - scene.keypoints
    edge = proj[model.edges[:, 1]] - proj[model.edges[:, 0]] - scene.edges
    return ResidualStack(kp, edge, symmetry_residuals(pose, model, scene), "projection")


def gm_weight(x, params: RobustParams):
    """Generalized German-McClure weight ``beta1^2 / (beta2^2 + x^2)``."""
    return params.beta1 ** 2 / (params.beta2 ** 2 + np.square(x))


def group_scales(model: ObjectModel, scene: Scene, use_edges=True, use_symmetry=True) -> np.ndarray:
    """Per-group multipliers ``(1, |K|/|E|, |K|/|S|)``; zero for excluded or empty groups."""
    k = model.n_keypoints
    se = k / scene.n_edges if (use_edges and scene.n_edges) else 0.0
    ss = k / scene.n_sym if (use_symmetry and scene.n_sym) else 0.0
    return np.array([1.0, se, ss])


def objective_terms(res: ResidualStack, betas: RobustBetas, covs: ElementCovariances):
    """Per-element robust terms (before group scaling) for a projection residual stack."""
    nk = np.linalg.norm(res.keypoint, axis=1)
    ne = np.linalg.norm(res.edge, axis=1)
    qk = np.einsum("ki,kij,kj->k", res.keypoint, covs.sigma_k, res.keypoint)
    qe = np.einsum("ki,kij,kj->k", res.edge, covs.sigma_e, res.edge)
    tk = gm_weight(nk, betas.k) * qk
    te = gm_weight(ne, betas.e) * qe
    ts = gm_weight(res.symmetry, betas.s) * np.square(res.symmetry)
    return tk, te, ts


def robust_objective(pose: Pose, model: ObjectModel, scene: Scene, betas: RobustBetas = RobustBetas(),
                     covs: Optional[ElementCovariances] = None, use_edges=True, use_symmetry=True) -> float:
    res = projection_residuals(pose, model, scene)
    tk, te, ts = objective_terms(res, betas, default_covs(model, covs))
    scales = group_scales(model, scene, use_edges, use_symmetry)
    total = tk.sum()
    if scales[1]:
        total += scales[1] * te.sum()
    if scales[2]:
        total += scales[2] * ts.sum()
    return float(total)


def keypoint_jacobians(xy, depth):
    """``d P(X) / d(c, c_bar)`` for projected points ``xy`` at depth ``depth``; shape (N, 2, 6)."""
    x, y = xy[:, 0], xy[:, 1]
    inv_z = 1.0 / depth
    J = np.zeros((len(x), 2, 6))
    J[:, 0, 0] = -x * y
    J[:, 0, 1] = 1.0 + x * x
    J[:, 0, 2] = -y
    J[:, 1, 0] = -1.0 - y * y
    J[:, 1, 1] = x * y
    J[:, 1, 2] = x
    J[:, 0, 3] = inv_z
    J[:, 0, 5] = -x * inv_z
    J[:, 1, 4] = inv_z
    J[:, 1, 5] = -y * inv_z
    return J


def analytic_jacobians(pose: Pose, model: ObjectModel, scene: Scene) -> JacobianStack:
    """Closed-form Jacobians of the projection residuals at ``pose``."""
    proj, depth = project_points(pose, model.keypoints)
    Jk = keypoint_jacobians(proj, depth)
    Je = Jk[model.edges[:, 1]] - Jk[model.edges[:, 0]]
    n = pose.R @ model.symmetry.normal
    m = _sym_cross(scene)
    Js = np.zeros((scene.n_sym, 6))
    Js[:, :3] = np.cross(n, m)
    Jsy = np.cross(n, homogeneous(scene.sym_q1))[:, :2]
    eye_k = -np.tile(np.eye(2), (model.n_keypoints, 1, 1))
    eye_e = -np.tile(np.eye(2), (model.n_edges, 1, 1))
    return JacobianStack(Jk, eye_k, Je, eye_e, Js, Jsy)


def _gm_gradient_factor(r, quad, params: RobustParams):
    """Return (a, b) with ``d/dr [rho(|r|) r'Sr] = a * S r + b * r``."""
    d = params.beta2 ** 2 + np.square(r) if r.ndim == 1 else params.beta2 ** 2 + np.sum(r * r, axis=1)
    b1 = params.beta1 ** 2
    return 2.0 * b1 / d, -2.0 * b1 * quad / d ** 2


def robust_gradient(pose: Pose, model: ObjectModel, scene: Scene, betas: RobustBetas = RobustBetas(),
                    covs: Optional[ElementCovariances] = None, use_edges=True, use_symmetry=True) -> np.ndarray:
    """Exact gradient of :func:`robust_objective` with respect to ``(c, c_bar)``."""
    covs = default_covs(model, covs)
    res = projection_residuals(pose, model, scene)
    jac = analytic_jacobians(pose, model, scene)
    scales = group_scales(model, scene, use_edges, use_symmetry)
    g = np.zeros(6)
    for r, J, S, params, scale in ((res.keypoint, jac.keypoint_x, covs.sigma_k, betas.k, scales[0]),
                                   (res.edge, jac.edge_x, covs.sigma_e, betas.e, scales[1])):
        if not scale or not len(r):
            continue
        Sr = np.einsum("kij,kj->ki", S, r)
        quad = np.sum(r * Sr, axis=1)
        a, b = _gm_gradient_factor(r, quad, params)
        dr = a[:, None] * Sr + b[:, None] * r
        g += scale * np.einsum("kij,ki->j", J, dr)
    if scales[2] and scene.n_sym:
        r = res.symmetry
        a, b = _gm_gradient_factor(r, r * r, betas.s)
        g += scales[2] * ((a + b) * r) @ jac.sym_x
    return g


def frozen_weight_system(pose: Pose, model: ObjectModel, scene: Scene, betas: RobustBetas = RobustBetas(),
                         covs: Optional[ElementCovariances] = None, use_edges=True, use_symmetry=True):
    """Gauss-Newton system with GM weights frozen at ``pose``.

    Returns ``(H, g)`` with ``H = sum w J' S J`` and ``g = sum w J' S r``; the
    Gauss-Newton step solves ``H delta = -g``.
    """
    covs = default_covs(model, covs)
    res = projection_residuals(pose, model, scene)
    jac = analytic_jacobians(pose, model, scene)
    scales = group_scales(model, scene, use_edges, use_symmetry)
    H = np.zeros((6, 6))
    g = np.zeros(6)
    for r, J, S, params, scale in ((res.keypoint, jac.keypoint_x, covs.sigma_k, betas.k, scales[0]),
                                   (res.edge, jac.edge_x, covs.sigma_e, betas.e, scales[1])):
        if not scale or not len(r):
            continue
        w = scale * gm_weight(np.linalg.norm(r, axis=1), params)
        WS = w[:, None, None] * S
        H += np.einsum("kia,kij,kjb->ab", J, WS, J)
        g += np.einsum("kia,kij,kj->a", J, WS, r)
    if scales[2] and scene.n_sym:
        w = scales[2] * gm_weight(res.symmetry, betas.s)
        H += (jac.sym_x * w[:, None]).T @ jac.sym_x
        g += jac.sym_x.T @ (w * res.symmetry)
    return H, g
