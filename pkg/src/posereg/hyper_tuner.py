"""Validation-set tuning of the initialization weights and the robust parameters.

Both tuners search in log-space (keeps every parameter positive) with
central finite-difference gradients, a BFGS direction and Armijo
backtracking; an iterate is only accepted if it lowers the objective, so the
returned objective never exceeds the starting one.
"""
from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConditioningFailure, InvalidConfig, PoseRegError
from .geometry import ObjectModel
from .init_solver import initialize_pose
from .observations import Scene
from .residuals import ElementCovariances, RobustBetas
from .refine_solver import KernelProblem


@dataclass(frozen=True)
class ValidationSet:
    model: ObjectModel
    scenes: tuple

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if not self.scenes:
            raise InvalidConfig("validation set is empty")
        for s in self.scenes:
            if s.gt_pose is None:
                raise InvalidConfig("every validation scene needs a ground-truth pose")
            s.check_against(self.model)


@dataclass(frozen=True)
class TunerConfig:
    fd_step: float = 1e-3  # in log-parameter units, i.e. relative
    max_outer_iters: int = 50
    armijo_c: float = 1e-4
    shrink: float = 0.5
    cond_tradeoff: float = 1e-3
    max_backtracks: int = 30
    grad_tol: float = 1e-12
    gradient_term: str = "newton"  # "newton": |H^-1 g|^2, "raw": |g|^2
    beta_span: float = 1e3  # each beta stays within [start / span, start * span]

    def __post_init__(self):
        if not 0 < self.shrink < 1:
            raise InvalidConfig("shrink must lie in (0, 1)")
        if self.beta_span <= 1:
            raise InvalidConfig("beta_span must exceed 1")
        if self.fd_step <= 0 or self.max_outer_iters < 0:
            raise InvalidConfig("fd_step must be positive and max_outer_iters non-negative")
        if self.gradient_term not in ("newton", "raw"):
            raise InvalidConfig("gradient_term must be 'newton' or 'raw'")


@dataclass
class TuneResult:
    params: np.ndarray
    objective: float
    start_objective: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    skipped: tuple = ()


def _fd_gradient(f, u, h, f0=None):
    g = np.zeros_like(u)
    for i in range(len(u)):
        e = np.zeros_like(u)
        e[i] = h
        fp, fm = f(u + e), f(u - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * h)
        elif f0 is not None and np.isfinite(fm):
            g[i] = (f0 - fm) / h
        elif f0 is not None and np.isfinite(fp):
            g[i] = (fp - f0) / h
    return g


def descend(f: Callable, u0, config: TunerConfig = TunerConfig()) -> TuneResult:
    """Minimize ``f`` over ``u`` (log-parameters) by FD-gradient BFGS with Armijo backtracking."""
    u = np.asarray(u0, dtype=float).copy()
    fu = f(u)
    start = fu
    trace = [fu]
    n = len(u)
    Hinv = np.eye(n)
    g = _fd_gradient(f, u, config.fd_step, fu)
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        if not np.isfinite(fu) or np.linalg.norm(g) <= config.grad_tol:
            it -= 1
            break
        d = -Hinv @ g
        if g @ d >= 0:  # curvature estimate went bad; restart from steepest descent
            Hinv = np.eye(n)
            d = -g
        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            cand = u + step * d
            fc = f(cand)
            if np.isfinite(fc) and fc <= fu + config.armijo_c * step * (g @ d) and fc < fu:
                accepted = True
                break
            step *= config.shrink
        if not accepted:
            if np.allclose(Hinv, np.eye(n)):
                it -= 1
                break
            Hinv = np.eye(n)  # retry once along the gradient
            continue
        g_new = _fd_gradient(f, cand, config.fd_step, fc)
        s, y = cand - u, g_new - g
        sy = s @ y
        if sy > 1e-16:
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        u, fu, g = cand, fc, g_new
        trace.append(fu)
    return TuneResult(u, fu, start, trace, it)


# --- initialization weights -------------------------------------------------

def init_error(val: ValidationSet, alpha_e: float, alpha_s: float) -> float:
    """``sum_I |R_init - R_gt|_F^2 + |t_init - t_gt|^2``; ``inf`` if a scene fails."""
    terms = []
    for s in val.scenes:
        try:
            p = initialize_pose(val.model, s, alpha_e, alpha_s)
        except PoseRegError:
            return np.inf
        terms.append(np.sum((p.R - s.gt_pose.R) ** 2) + np.sum((p.t - s.gt_pose.t) ** 2))
    return math.fsum(terms)  # exact sum: independent of scene order


def tune_alphas(val: ValidationSet, config: TunerConfig = TunerConfig(), start=(1.0, 1.0),
                tune=(True, True), full_result=False):
    """Tuned ``(alpha_e, alpha_s)``; entries with ``tune`` False stay at ``start``."""
    start = np.asarray(start, dtype=float)
    free = np.flatnonzero(tune)
    if not len(free):
        res = TuneResult(np.log(start), init_error(val, *start), init_error(val, *start))
        return (tuple(start), res) if full_result else tuple(start)
    if np.any(start[free] <= 0):
        raise InvalidConfig("tuned alphas must start positive")

    def alphas(u):
        a = start.copy()
        a[free] = np.exp(u)
        return a

    res = descend(lambda u: init_error(val, *alphas(u)), np.log(start[free]), config)
    out = tuple(float(x) for x in alphas(res.params))
    return (out, res) if full_result else out


# --- robust parameters --------------------------------------------------------

def condition_number(h) -> float:
    """``lambda_max / lambda_min`` of a symmetric PSD matrix; ``inf`` when numerically singular."""
    h = np.asarray(h, dtype=float)
    if not np.allclose(h, h.T, atol=1e-10 * max(1.0, np.abs(h).max())):
        raise ValueError("matrix is not symmetric")
    lam = np.linalg.eigvalsh(h)
    if lam[-1] <= 0 or lam[0] <= 1e-14 * lam[-1]:
        return np.inf
    return float(lam[-1] / lam[0])


def local_model(model: ObjectModel, scene: Scene, betas: RobustBetas,
                covs: Optional[ElementCovariances] = None, use_edges=True, use_symmetry=True):
    """Gradient and Gauss-Newton Hessian of the robust objective at the ground truth.

    Returns ``(g, H)`` in the convention ``f ~ f0 + 2 g'c + c'Hc``.
    """
    prob = KernelProblem(model, scene, betas, covs, use_edges, use_symmetry)
    f, H, g, ok = prob.system(scene.gt_pose)
    if not ok:
        raise ConditioningFailure("ground-truth pose puts a keypoint behind the camera")
    return g, H


def beta_objective_terms(val: ValidationSet, betas: RobustBetas, config: TunerConfig = TunerConfig(),
                         covs=None, use_edges=True, use_symmetry=True):
    """Per-scene ``(gradient term, condition number)`` at the ground truth."""
    out = []
    for s in val.scenes:
        g, H = local_model(val.model, s, betas, covs, use_edges, use_symmetry)
        kappa = condition_number(H)
        if config.gradient_term == "raw":
            gt = float(4.0 * g @ g)
        elif np.isfinite(kappa):
            d = np.linalg.solve(H, g)
            gt = float(d @ d)
        else:
            gt = np.inf
        out.append((gt, kappa))
    return out


def tune_betas(val: ValidationSet, config: TunerConfig = TunerConfig(), start: RobustBetas = RobustBetas(),
               covs=None, use_edges=True, use_symmetry=True, full_result=False):
    """Robust parameters minimizing gradient term + ``cond_tradeoff`` * condition number at the ground truth.

    Scenes whose Hessian is singular for every probed parameter set are
    skipped (listed in the full result); if all are, ConditioningFailure.
    """
    seen_finite = np.zeros(len(val.scenes), dtype=bool)

    u0 = np.log(start.as_array())
    span = np.log(config.beta_span)

    def objective(u):
        if np.any(np.abs(u - u0) > span):
            return np.inf
        terms = beta_objective_terms(val, RobustBetas.from_array(np.exp(u)), config, covs,
                                     use_edges, use_symmetry)
        total = 0.0
        for i, (gt, kappa) in enumerate(terms):
            if np.isfinite(kappa):
                seen_finite[i] = True
                total += gt + config.cond_tradeoff * kappa
            elif seen_finite[i]:
                return np.inf  # this scene is usable elsewhere; a singular probe is a bad point
        return total

    objective(u0)
    if not seen_finite.any():
        raise ConditioningFailure("Hessian singular for every validation scene")
    res = descend(objective, u0, config)
    res.skipped = tuple(int(i) for i in np.flatnonzero(~seen_finite))
    betas = RobustBetas.from_array(np.exp(res.params))
    return (betas, res) if full_result else betas
