"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Reports the median wall time per call of the robust normal-equation
assembly, a full refinement, and the ADD-S closest-point kernel.
"""
import argparse
import statistics
import sys
import timeit

import numpy as np

from posereg import kernels
from posereg.geometry import LocalPoseDelta, apply_delta
from posereg.refine_solver import KernelProblem, RefineConfig, gauss_newton_refine
from posereg.residuals import RobustBetas
from posereg.synth import GenConfig, NoiseModel, generate_scenes, make_procedural_model


def _median_time(fn, repeat, number):
    return statistics.median(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--n-sym", type=int, default=200)
    args = ap.parse_args(argv)

    try:
        compiled = kernels.get_backend("cython")
    except ImportError:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    backends = {"python": kernels.get_backend("python"), "cython": compiled}

    model = make_procedural_model("box")
    gen = GenConfig(noise=NoiseModel.uniform(0.002), outlier_rates=(0.0, 0.0, 0.2), n_sym_corrs=args.n_sym, seed=0)
    scene = generate_scenes(model, 1, gen)[0]
    pose = apply_delta(scene.gt_pose, LocalPoseDelta([0.05, -0.03, 0.02], [0.01, 0.0, 0.03]))
    args_k = KernelProblem(model, scene, RobustBetas()).args
    pts = np.ascontiguousarray(model.surface_samples)
    other = np.ascontiguousarray(pts + 0.01)

    rows = []
    for label, make, number in (
        ("robust_system", lambda b, n: lambda: b.robust_system(pose.R, pose.t, *args_k), 200),
        ("refine", lambda b, n: lambda: gauss_newton_refine(pose, model, scene, RefineConfig(), backend=n), 5),
        ("mean_closest_distance", lambda b, n: lambda: b.mean_closest_distance(pts, other), 5),
    ):
        times = {}
        for name, impl in backends.items():
            times[name] = _median_time(make(impl, name), args.repeat, number)
        rows.append((label, times["python"], times["cython"]))

    print(f"{'kernel':24s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for label, tp, tc in rows:
        print(f"{label:24s} {tp * 1e3:12.3f} {tc * 1e3:12.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
