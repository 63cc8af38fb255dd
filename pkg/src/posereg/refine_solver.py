"""Robust Gauss-Newton refinement.

GM weights are frozen at the start of each iteration (iteratively reweighted
Gauss-Newton); a step is accepted only if the full robust objective does not
increase, halving it otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DepthNonPositive, NumericalFailure
from .geometry import LocalPoseDelta, ObjectModel, Pose, apply_delta
from .observations import Scene
from .residuals import ElementCovariances, RobustBetas, default_covs, group_scales, _sym_cross

FALLBACK_DAMPING = 1e-6
MAX_HALVINGS = 20


@dataclass(frozen=True)
class RefineConfig:
    betas: RobustBetas = RobustBetas()
    covs: Optional[ElementCovariances] = None
    max_iters: int = 100
    step_tol: float = 1e-10
    damping: float = 0.0
    use_edges: bool = True
    use_symmetry: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")


@dataclass
class RefineReport:
    pose: Pose
    iterations: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    final_gradient_norm: float = float("nan")


class KernelProblem:
    """Scene data packed once for the kernel calls of one refinement."""

    def __init__(self, model: ObjectModel, scene: Scene, betas: RobustBetas,
                 covs: Optional[ElementCovariances] = None, use_edges=True, use_symmetry=True, backend=None):
        scene.check_against(model)
        covs = default_covs(model, covs)
        self.impl = kernels.get_backend(backend) if backend else kernels
        self.args = (
            np.ascontiguousarray(model.keypoints, dtype=float),
            np.ascontiguousarray(scene.keypoints, dtype=float),
            np.ascontiguousarray(model.edges, dtype=np.int64).reshape(-1, 2),
            np.ascontiguousarray(scene.edges, dtype=float).reshape(-1, 2),
            np.ascontiguousarray(_sym_cross(scene), dtype=float).reshape(-1, 3),
            np.ascontiguousarray(model.symmetry.normal, dtype=float),
            np.ascontiguousarray(betas.as_array()),
            np.ascontiguousarray(group_scales(model, scene, use_edges, use_symmetry)),
            np.ascontiguousarray(covs.sigma_k, dtype=float).reshape(-1, 2, 2),
            np.ascontiguousarray(covs.sigma_e, dtype=float).reshape(-1, 2, 2),
        )

    def value(self, pose: Pose) -> float:
        return self.impl.robust_value(pose.R, pose.t, *self.args)

    def system(self, pose: Pose):
        return self.impl.robust_system(pose.R, pose.t, *self.args)


def _solve(H, g, damping):
    lam = damping
    for _ in range(2):
        A = H + lam * np.eye(6) if lam else H
        try:
            if np.linalg.cond(A) < 1e14:
                return np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            pass
        lam = max(lam, FALLBACK_DAMPING * max(1.0, np.trace(H) / 6))
    raise NumericalFailure("normal matrix singular even after damping")


def gauss_newton_refine(init: Pose, model: ObjectModel, scene: Scene,
                        config: RefineConfig = RefineConfig(), backend=None) -> RefineReport:
    prob = KernelProblem(model, scene, config.betas, config.covs, config.use_edges,
                         config.use_symmetry, backend)
    pose = init
    f, H, g, ok = prob.system(pose)
    if not ok:
        raise DepthNonPositive("initial pose puts a keypoint behind the camera")
    trace = [f]
    converged = False
    it = 0
    while it < config.max_iters:
        it += 1
        # a pose that already zeroes the gradient is a fixed point
        if not np.any(g):
            converged = True
            break
        step = _solve(H, g, config.damping)
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            cand = apply_delta(pose, LocalPoseDelta.from_vector(step))
            fc = prob.value(cand)
            if fc <= f:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            converged = True  # no descent direction left at working precision
            break
        pose = cand
        f, H, g, _ = prob.system(pose)
        trace.append(f)
        if np.linalg.norm(step) < config.step_tol:
            converged = True
            break
    return RefineReport(pose, it, trace, converged, float(np.linalg.norm(g)))


def refine_pose(init: Pose, model: ObjectModel, scene: Scene, config: RefineConfig = RefineConfig()) -> Pose:
    return gauss_newton_refine(init, model, scene, config).pose
