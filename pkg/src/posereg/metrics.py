"""Pose accuracy metrics: ADD / ADD-S, geodesic rotation error, relative translation error."""
from __future__ import annotations

import numpy as np

from . import kernels
from .geometry import ObjectModel, Pose

ADD_THRESHOLD = 0.1  # fraction of the model diameter


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix, in ``[0, pi]``.

    Equal to ``arccos((tr R - 1) / 2)`` but evaluated with ``atan2`` so that
    angles near 0 and pi keep full precision.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def rotation_error(R_gt, R_est) -> float:
    return rotation_angle(np.asarray(R_gt).T @ np.asarray(R_est))


def translation_error(t_gt, t_est, diameter) -> float:
    return float(np.linalg.norm(np.asarray(t_est) - np.asarray(t_gt)) / diameter)


def pose_errors(gt: Pose, est: Pose, diameter: float):
    """``(rotation error in radians, translation error relative to the diameter)``."""
    return rotation_error(gt.R, est.R), translation_error(gt.t, est.t, diameter)


def add_metric(points, pose_a: Pose, pose_b: Pose) -> float:
    a, b = pose_a.transform(points), pose_b.transform(points)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def add_s_metric(points, pose_a: Pose, pose_b: Pose) -> float:
    """Mean distance from each point under ``pose_a`` to the closest point under ``pose_b``."""
    a, b = pose_a.transform(points), pose_b.transform(points)
    return float(kernels.mean_closest_distance(np.ascontiguousarray(a), np.ascontiguousarray(b)))


def add_s(model: ObjectModel, pose_a: Pose, pose_b: Pose) -> float:
    """ADD, or ADD-S when the model has a pose ambiguity."""
    pts = model.surface_samples if len(model.surface_samples) else model.keypoints
    if model.has_pose_ambiguity:
        return add_s_metric(pts, pose_a, pose_b)
    return add_metric(pts, pose_a, pose_b)


def add_s_correct(model: ObjectModel, gt: Pose, est: Pose, threshold=ADD_THRESHOLD) -> bool:
    return add_s(model, gt, est) < threshold * model.diameter
