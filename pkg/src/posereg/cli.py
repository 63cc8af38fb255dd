"""``posereg`` command line.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input),
3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import documents as docs
from .bench import SolverArm, ablation_arms, run_benchmark
from .errors import DataError, InvalidConfig, NumericalError
from .hyper_tuner import TunerConfig, ValidationSet, tune_alphas, tune_betas
from .init_solver import initialize_pose
from .metrics import add_s, add_s_correct, pose_errors
from .refine_solver import RefineConfig, gauss_newton_refine
from .residuals import RobustBetas, RobustParams
from .stability_lab import (a8_csv, a8_scan, covariance_csv, effective_weights, monte_carlo_covariance,
                            predict_covariance, square_csv, square_example)
from .synth import GenConfig, NoiseModel, generate_scenes, make_procedural_model, sample_pose, generate_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _beta_pair(text):
    try:
        b1, b2 = (float(v) for v in text.split(","))
        return RobustParams(b1, b2)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'beta1,beta2' with positive numbers")


def _rates(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected three comma-separated rates")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated rates")
    return vals


def _model(args):
    if getattr(args, "model", None):
        return docs.load_model(args.model)
    return make_procedural_model(getattr(args, "kind", "box"))


def _emit(text, path):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _gen_config(args) -> GenConfig:
    noise = NoiseModel.uniform(args.sigma)
    return GenConfig(noise=noise, outlier_rates=args.outliers, n_sym_corrs=args.n_sym, seed=args.seed)


# --- subcommands ---------------------------------------------------------------------

def cmd_generate(args):
    model = _model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.model:
        docs.write_json(out / "model.json", docs.model_to_doc(model))
    for i, scene in enumerate(generate_scenes(model, args.n, _gen_config(args))):
        docs.save_scene(out / f"scene_{i:04d}.json", scene)
    print(f"wrote {args.n} scenes to {out}", file=sys.stderr)


def _solver_settings(args):
    settings = {"alpha_e": 1.0, "alpha_s": 1.0, "betas": RobustBetas()}
    if args.config:
        settings.update(docs.config_from_doc(docs.read_json(args.config)))
    b = settings["betas"]
    settings["betas"] = RobustBetas(args.beta_k or b.k, args.beta_e or b.e, args.beta_s or b.s)
    if args.alpha_e is not None:
        settings["alpha_e"] = args.alpha_e
    if args.alpha_s is not None:
        settings["alpha_s"] = args.alpha_s
    if args.no_edges:
        settings["alpha_e"] = 0.0
    if args.no_symmetry:
        settings["alpha_s"] = 0.0
    return settings


def cmd_solve(args):
    model = docs.load_model(args.model)
    scene = docs.load_scene(args.scene, model)
    s = _solver_settings(args)
    t0 = time.perf_counter()
    init = initialize_pose(model, scene, s["alpha_e"], s["alpha_s"])
    result = {"tool_version": __version__, "init_pose": docs.pose_to_doc(init)}
    cfg = RefineConfig(betas=s["betas"], max_iters=args.max_iters, use_edges=not args.no_edges,
                       use_symmetry=not args.no_symmetry)
    if args.no_refine:
        final, iterations, trace = init, 0, []
    else:
        rep = gauss_newton_refine(init, model, scene, cfg)
        final, iterations, trace = rep.pose, rep.iterations, rep.objective_trace
    elapsed = (time.perf_counter() - t0) * 1e3
    result["refined_pose"] = docs.pose_to_doc(final)
    result["iterations"] = iterations
    result["objective_trace"] = [float(f) for f in trace]
    if scene.gt_pose is not None:
        rot, trans = pose_errors(scene.gt_pose, final, model.diameter)
        result["metrics"] = {"rotation_error": rot, "translation_error": trans,
                             "add_s": add_s(model, scene.gt_pose, final),
                             "add_s_correct": bool(add_s_correct(model, scene.gt_pose, final))}
    result["timing_ms"] = elapsed
    result["solver_config"] = docs.config_to_doc(s["alpha_e"], s["alpha_s"], s["betas"],
                                                 refine=not args.no_refine, use_edges=not args.no_edges,
                                                 use_symmetry=not args.no_symmetry, max_iters=args.max_iters)
    _emit(docs.dumps(result), args.out)


def cmd_tune(args):
    model = docs.load_model(args.model)
    files = sorted(Path(args.scenes).glob("*.json"))
    files = [f for f in files if f.name != "model.json"]
    if not files:
        raise InvalidConfig(f"no scene documents in {args.scenes}")
    val = ValidationSet(model, [docs.load_scene(f, model) for f in files[:args.limit]])
    cfg = TunerConfig(max_outer_iters=args.max_iters)
    alphas, betas = (1.0, 1.0), RobustBetas()
    extra = {}
    if args.what in ("alphas", "both"):
        alphas, res = tune_alphas(val, cfg, full_result=True)
        extra["alpha_objective"] = [res.start_objective, res.objective]
    if args.what in ("betas", "both"):
        betas, res = tune_betas(val, cfg, full_result=True)
        extra["beta_objective"] = [res.start_objective, res.objective]
        extra["skipped_scenes"] = [files[i].name for i in res.skipped]
    doc = docs.config_to_doc(alphas[0], alphas[1], betas, n_scenes=len(val.scenes), **extra)
    _emit(docs.dumps(doc), args.out)


def cmd_bench(args):
    model = _model(args)
    betas = RobustBetas()
    if args.beta2 is not None:
        betas = RobustBetas(*(RobustParams(1.0, args.beta2),) * 3)
    arms = [SolverArm(a.name, a.alpha_e, a.alpha_s if a.alpha_s == 0 else args.alpha_s, a.use_edges,
                      a.use_symmetry, not args.no_refine, betas) for a in ablation_arms(betas)]
    report = run_benchmark(model, args.n, _gen_config(args), arms, threads=args.threads)
    csv_text = report.to_csv()
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    summary = report.summary()
    if args.out:
        docs.write_json(args.out, {"tool_version": __version__, "n_scenes": report.n_scenes,
                                   "seed": args.seed, "arms": summary})
    if not args.csv:
        sys.stdout.write(csv_text)
    for name, m in summary.items():
        print(f"{name:20s} ADD(-S) {m['add_s_accuracy']:.3f}  rot mean {np.degrees(m['mean_rotation']):.3f} deg"
              f"  median {np.degrees(m['median_rotation']):.3f} deg  trans mean {m['mean_translation']:.4f}"
              f"  failures {m['failures']}", file=sys.stderr)


def cmd_stability(args):
    if args.what == "square":
        parts = [square_csv(square_example(d, args.corr_grid)) for d in args.delta]
        # one header, delta as the leading column
        lines = ["delta," + parts[0].split("\n", 1)[0]]
        for d, part in zip(args.delta, parts):
            lines += [f"{d:.17g},{row}" for row in part.split("\n")[1:] if row]
        text = "\n".join(lines) + "\n"
    elif args.what == "a8":
        grid = np.logspace(np.log10(args.beta_min), np.log10(args.beta_max), args.grid)
        scan = a8_scan(args.delta[0], args.sigma_k, args.sigma_e, grid)
        print(f"best beta_e: closed form {scan.best_closed:.6g}, covariance {scan.best_cov:.6g}, "
              f"sigma_k^2/sigma_e^2 = {args.sigma_k ** 2 / args.sigma_e ** 2:.6g}", file=sys.stderr)
        text = a8_csv(scan)
    else:
        model = _model(args)
        rng = np.random.default_rng(args.seed)
        gt = sample_pose(model, GenConfig(), rng)
        base = generate_scene(model, gt, GenConfig(seed=args.seed))
        noise = NoiseModel(args.sigma_k, args.sigma_e, args.sigma_s)
        betas = RobustBetas.quadratic()
        we, ws = effective_weights(model, base, betas)
        pred = predict_covariance(model, gt, base, we, ws, noise).predicted_cov
        emp = monte_carlo_covariance(model, gt, noise, args.trials, args.seed, base, betas)
        text = covariance_csv(pred, emp)
    _emit(text, args.csv)


def cmd_metrics(args):
    model = docs.load_model(args.model)
    a = docs.pose_from_any(docs.read_json(args.pose_a))
    b = docs.pose_from_any(docs.read_json(args.pose_b))
    rot, trans = pose_errors(a, b, model.diameter)
    doc = {"rotation_error": rot, "rotation_error_deg": float(np.degrees(rot)), "translation_error": trans,
           "add_s": add_s(model, a, b), "add_s_correct": bool(add_s_correct(model, a, b))}
    _emit(docs.dumps(doc), args.out)


# --- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="posereg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def gen_flags(sp, n_default):
        sp.add_argument("--model", help="model document (default: procedural box)")
        sp.add_argument("--kind", default="box", choices=["box", "ellipsoid"])
        sp.add_argument("--n", type=int, default=n_default)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--sigma", type=float, default=0.002, help="noise std for every group")
        sp.add_argument("--outliers", type=_rates, default=(0.0, 0.0, 0.0),
                        help="keypoint,edge,symmetry outlier rates")
        sp.add_argument("--n-sym", type=int, default=50)

    sp = sub.add_parser("generate", help="write synthetic scenes")
    gen_flags(sp, 10)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("solve", help="estimate the pose for one scene")
    sp.add_argument("--model", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--config", help="solver config document (e.g. from 'tune')")
    sp.add_argument("--alpha-e", type=float)
    sp.add_argument("--alpha-s", type=float)
    sp.add_argument("--beta-k", type=_beta_pair)
    sp.add_argument("--beta-e", type=_beta_pair)
    sp.add_argument("--beta-s", type=_beta_pair)
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--no-edges", action="store_true")
    sp.add_argument("--no-symmetry", action="store_true")
    sp.add_argument("--max-iters", type=int, default=100)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("tune", help="tune alphas and betas on a directory of scenes")
    sp.add_argument("--model", required=True)
    sp.add_argument("--scenes", required=True)
    sp.add_argument("--what", choices=["alphas", "betas", "both"], default="both")
    sp.add_argument("--max-iters", type=int, default=20)
    sp.add_argument("--limit", type=int, default=None, help="use at most this many scenes")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("bench", help="paired ablation benchmark")
    gen_flags(sp, 50)
    sp.set_defaults(outliers=(0.0, 0.0, 0.2))
    sp.add_argument("--beta2", type=float, help="beta2 for every group (beta1 = 1)")
    sp.add_argument("--alpha-s", type=float, default=1.0, help="alpha_s of the symmetry arms")
    sp.add_argument("--no-refine", action="store_true")
    sp.add_argument("--threads", type=int, help="worker threads (default: POSEREG_NUM_THREADS or 1)")
    sp.add_argument("--csv", help="per-scene CSV (default: stdout)")
    sp.add_argument("--out", help="summary JSON")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("stability", help="square-example tables, a8 scan, covariance vs Monte Carlo")
    sp.add_argument("what", choices=["square", "a8", "covariance"])
    sp.add_argument("--delta", type=float, nargs="+", default=[0.5])
    sp.add_argument("--corr-grid", type=int, default=200)
    sp.add_argument("--sigma-k", type=float, default=0.01)
    sp.add_argument("--sigma-e", type=float, default=0.02)
    sp.add_argument("--sigma-s", type=float, default=None)
    sp.add_argument("--beta-min", type=float, default=1e-2)
    sp.add_argument("--beta-max", type=float, default=1e2)
    sp.add_argument("--grid", type=int, default=101)
    sp.add_argument("--model")
    sp.add_argument("--kind", default="box", choices=["box", "ellipsoid"])
    sp.add_argument("--trials", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", help="output CSV (default: stdout)")
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("metrics", help="ADD(-S) and pose errors between two pose documents")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pose-a", required=True)
    sp.add_argument("--pose-b", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "what", None) == "covariance" and args.sigma_s is None:
            args.sigma_s = args.sigma_k
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
