"""Paired ablation benchmark over synthetic scenes."""
from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, PoseRegError
from .geometry import ObjectModel
from .init_solver import initialize_pose
from .metrics import ADD_THRESHOLD, add_s, pose_errors
from .refine_solver import RefineConfig, gauss_newton_refine
from .residuals import RobustBetas
from .synth import GenConfig, generate_scenes

THREADS_ENV = "POSEREG_NUM_THREADS"


@dataclass(frozen=True)
class SolverArm:
    name: str
    alpha_e: float = 1.0
    alpha_s: float = 1.0
    use_edges: bool = True
    use_symmetry: bool = True
    refine: bool = True
    betas: RobustBetas = RobustBetas()
    max_iters: int = 100

    def refine_config(self) -> RefineConfig:
        return RefineConfig(betas=self.betas, max_iters=self.max_iters,
                            use_edges=self.use_edges, use_symmetry=self.use_symmetry)


def ablation_arms(betas: RobustBetas = RobustBetas(), refine=True):
    """Keypoints only, keypoints + symmetry, and the full model."""
    return [
        SolverArm("keypoints", 0.0, 0.0, False, False, refine, betas),
        SolverArm("keypoints+symmetry", 0.0, 1.0, False, True, refine, betas),
        SolverArm("full", 1.0, 1.0, True, True, refine, betas),
    ]


@dataclass
class ArmMetrics:
    name: str
    rotation_errors: list = field(default_factory=list)  # radians, nan on failure
    translation_errors: list = field(default_factory=list)  # relative to the diameter
    add_values: list = field(default_factory=list)
    failures: int = 0

    def _ok(self, values):
        a = np.asarray(values, dtype=float)
        return a[np.isfinite(a)]

    @property
    def mean_rotation(self) -> float:
        return float(np.mean(self._ok(self.rotation_errors)))

    @property
    def median_rotation(self) -> float:
        return float(np.median(self._ok(self.rotation_errors)))

    @property
    def mean_translation(self) -> float:
        return float(np.mean(self._ok(self.translation_errors)))

    @property
    def median_translation(self) -> float:
        return float(np.median(self._ok(self.translation_errors)))


@dataclass
class MetricsReport:
    arms: dict
    n_scenes: int
    diameter: float
    seconds: float = 0.0

    def add_s_accuracy(self, arm: str) -> float:
        m = self.arms[arm]
        vals = np.asarray(m.add_values, dtype=float)
        return float(np.mean(vals < ADD_THRESHOLD * self.diameter)) if len(vals) else 0.0

    def summary(self) -> dict:
        out = {}
        for name, m in self.arms.items():
            out[name] = {
                "add_s_accuracy": self.add_s_accuracy(name),
                "mean_rotation": m.mean_rotation,
                "median_rotation": m.median_rotation,
                "mean_translation": m.mean_translation,
                "median_translation": m.median_translation,
                "failures": m.failures,
            }
        return out

    def to_csv(self) -> str:
        """One row per (scene, arm); floats written with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene", "arm", "rotation_error", "translation_error", "add", "failed"])
        names = list(self.arms)
        for i in range(self.n_scenes):
            for name in names:
                m = self.arms[name]
                r, t, a = m.rotation_errors[i], m.translation_errors[i], m.add_values[i]
                w.writerow([i, name, f"{r:.17g}", f"{t:.17g}", f"{a:.17g}", int(not np.isfinite(r))])
        return buf.getvalue()


def solve_scene(model: ObjectModel, scene, arm: SolverArm):
    pose = initialize_pose(model, scene, arm.alpha_e, arm.alpha_s)
    if arm.refine:
        pose = gauss_newton_refine(pose, model, scene, arm.refine_config()).pose
    return pose


def _evaluate(model, scene, arms):
    out = []
    for arm in arms:
        try:
            est = solve_scene(model, scene, arm)
        except PoseRegError:
            out.append(None)
            continue
        r, t = pose_errors(scene.gt_pose, est, model.diameter)
        out.append((r, t, add_s(model, scene.gt_pose, est)))
    return out


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_benchmark(model: ObjectModel, n_scenes: int, gen: GenConfig, arms=None, threads=None) -> MetricsReport:
    """Evaluate every arm on the same seeded scenes."""
    if n_scenes < 1:
        raise InvalidConfig("n_scenes must be >= 1")
    arms = list(arms) if arms is not None else ablation_arms()
    if not arms:
        raise InvalidConfig("need at least one solver arm")
    t0 = time.perf_counter()
    scenes = generate_scenes(model, n_scenes, gen)
    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda s: _evaluate(model, s, arms), scenes))
    else:
        results = [_evaluate(model, s, arms) for s in scenes]
    metrics = {a.name: ArmMetrics(a.name) for a in arms}
    for row in results:
        for arm, res in zip(arms, row):
            m = metrics[arm.name]
            if res is None:
                m.failures += 1
                res = (np.nan, np.nan, np.inf)
            m.rotation_errors.append(res[0])
            m.translation_errors.append(res[1])
            m.add_values.append(res[2])
    return MetricsReport(metrics, n_scenes, model.diameter, time.perf_counter() - t0)
