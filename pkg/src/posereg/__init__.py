"""Hybrid-representation 6D pose regression.

Poses are recovered from predicted 2D keypoints, keypoint-graph edge vectors
and reflection-symmetry correspondences: a null-space initialization followed
by robust Gauss-Newton refinement.
"""
from .errors import (ConditioningFailure, CountMismatch, DataError, DegenerateSystem, DepthNonPositive,
                     FrustumViolation, IntrinsicsInvalid, InvalidConfig, NumericalError, NumericalFailure,
                     PoseRegError, RankDeficientTranslation, SchemaError, SingularInformation)
from .geometry import (CameraIntrinsics, LocalPoseDelta, ObjectModel, Pose, SymmetryPlane, apply_delta,
                       delta_between, exp_so3, log_so3)
from .init_solver import initialize, initialize_pose
from .kernels import BACKEND
from .observations import Scene, ingest_scene
from .refine_solver import RefineConfig, gauss_newton_refine, refine_pose
from .residuals import RobustBetas, RobustParams

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "ConditioningFailure", "CountMismatch", "DataError", "DegenerateSystem",
    "DepthNonPositive", "FrustumViolation", "IntrinsicsInvalid", "InvalidConfig", "LocalPoseDelta",
    "NumericalError", "NumericalFailure", "ObjectModel", "Pose", "PoseRegError", "RankDeficientTranslation",
    "RefineConfig", "RobustBetas", "RobustParams", "Scene", "SchemaError", "SingularInformation",
    "SymmetryPlane", "BACKEND", "apply_delta", "delta_between", "exp_so3", "gauss_newton_refine",
    "ingest_scene", "initialize", "initialize_pose", "log_so3", "refine_pose",
]
