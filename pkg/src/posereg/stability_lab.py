"""First-order stability analysis of the pose estimate.

Jacobian stacks are 6 x n with one column per scalar residual.  For the
weighted least-squares problem ``sum |r_K|^2 + beta_e sum |r_E|^2 +
beta_s sum r_S^2`` at a noiseless optimum the pose perturbation is, to first
order, ``-A^{-1} B dy`` with ``A = J_K J_K' + beta_e J_E J_E' + beta_s J_S J_S'``
and ``B = (J_K D_K, beta_e J_E D_E, beta_s J_S D_S)``, ``D`` being the
derivatives of the residuals with respect to the observation noise.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfig, PoseRegError, SingularInformation
from .geometry import ObjectModel, Pose, SymmetryPlane, delta_between
from .observations import Scene
from .refine_solver import RefineConfig, gauss_newton_refine
from .residuals import RobustBetas, analytic_jacobians
from .synth import GenConfig, NoiseModel, generate_scene

SINGULAR_RTOL = 1e-12


@dataclass
class StabilityReport:
    j_k: np.ndarray  # (6, 2K)
    j_e: np.ndarray  # (6, 2E)
    j_s: np.ndarray  # (6, S), translation rows zero
    a_mat: np.ndarray
    predicted_cov: np.ndarray
    empirical_cov: Optional[np.ndarray] = None
    trials: int = 0
    beta_e: float = 0.0
    beta_s: float = 0.0


@dataclass
class SquareExample:
    delta: float
    h_k: np.ndarray
    h_e: np.ndarray
    h_s: np.ndarray

    @property
    def h_s_nonzero_eigenvalues(self) -> np.ndarray:
        lam = np.linalg.eigvalsh(self.h_s)
        return np.sort(lam[lam > 1e-12 * max(lam.max(), 1e-300)])


@dataclass
class A8Scan:
    beta_grid: np.ndarray
    a8_closed: np.ndarray
    a8_cov: np.ndarray
    best_closed: float
    best_cov: float

    def __iter__(self):
        # unpacks as (best_beta_e, a8_values)
        return iter((self.best_closed, self.a8_closed))


@dataclass
class MonteCarloResult:
    cov: np.ndarray
    trials: int
    failures: int
    deltas: np.ndarray = field(repr=False, default=None)


# --- Jacobian stacks ----------------------------------------------------------

def jacobian_stacks(model: ObjectModel, pose: Pose, scene: Scene):
    """``(j_k, j_e, j_s, d_k, d_e, d_s)``: pose stacks (6 x n) and noise derivatives.

    ``d_k``/``d_e`` are block diagonal (2n x 2n); ``d_s`` is (S, 2), one row per pair.
    """
    jac = analytic_jacobians(pose, model, scene)
    j_k = jac.keypoint_x.reshape(-1, 6).T
    j_e = jac.edge_x.reshape(-1, 6).T
    j_s = jac.sym_x.T
    d_k = _block_diag(jac.keypoint_y)
    d_e = _block_diag(jac.edge_y)
    d_s = np.asarray(jac.sym_y, dtype=float).reshape(-1, 2)
    return j_k, j_e, j_s, d_k, d_e, d_s


def _block_diag(blocks):
    n = len(blocks)
    out = np.zeros((2 * n, 2 * n))
    for i, b in enumerate(blocks):
        out[2 * i:2 * i + 2, 2 * i:2 * i + 2] = b
    return out


def _noise_cov(noise: NoiseModel, n_k, n_e, cross_ke=None):
    """``Var`` of the stacked (keypoint, edge) observations, optionally with a K-E block."""
    nk, ne = 2 * n_k, 2 * n_e
    V = np.zeros((nk + ne,) * 2)
    V[:nk, :nk] = noise.sigma_k ** 2 * np.eye(nk)
    V[nk:, nk:] = noise.sigma_e ** 2 * np.eye(ne)
    if cross_ke is not None:
        V[:nk, nk:] = cross_ke
        V[nk:, :nk] = np.asarray(cross_ke).T
    return V


def information_matrix(j_k, j_e, j_s, beta_e, beta_s):
    return j_k @ j_k.T + beta_e * (j_e @ j_e.T) + beta_s * (j_s @ j_s.T)


def _check_information(A):
    lam, vec = np.linalg.eigh(A)
    if lam[-1] <= 0 or lam[0] <= SINGULAR_RTOL * lam[-1]:
        null = vec[:, lam <= SINGULAR_RTOL * max(lam[-1], 0.0)].T
        raise SingularInformation("information matrix is singular", null)


def _covariance(stacks, beta_e, beta_s, noise: NoiseModel, cross_ke=None):
    j_k, j_e, j_s, d_k, d_e, d_s = stacks
    A = information_matrix(j_k, j_e, j_s, beta_e, beta_s)
    _check_information(A)
    B = np.hstack([j_k @ d_k, beta_e * (j_e @ d_e)])
    V = _noise_cov(noise, d_k.shape[0] // 2, d_e.shape[0] // 2, cross_ke)
    # symmetry noise is independent per pair: sum_s sigma^2 |dr_s/dy_s|^2 J_s J_s'
    M = B @ V @ B.T + (beta_s * noise.sigma_s) ** 2 * (j_s * np.sum(d_s ** 2, axis=1)) @ j_s.T
    Ainv = np.linalg.inv(A)
    C = Ainv @ M @ Ainv
    return A, 0.5 * (C + C.T)


def predict_covariance(model: ObjectModel, gt_pose: Pose, scene: Scene, beta_e: float, beta_s: float,
                       noise: NoiseModel, cross_ke=None) -> StabilityReport:
    """Predicted covariance of the local pose delta ``(c, c_bar)`` around ``gt_pose``."""
    if beta_e < 0 or beta_s < 0:
        raise InvalidConfig("weights must be non-negative")
    stacks = jacobian_stacks(model, gt_pose, scene)
    A, C = _covariance(stacks, beta_e, beta_s, noise, cross_ke)
    return StabilityReport(stacks[0], stacks[1], stacks[2], A, C, beta_e=beta_e, beta_s=beta_s)


def effective_weights(model: ObjectModel, scene: Scene, betas: RobustBetas = RobustBetas()):
    """``(beta_e, beta_s)`` of the linear theory matching the refiner near a zero-residual optimum."""
    wk = betas.k.peak
    we = model.n_keypoints / scene.n_edges * betas.e.peak / wk if scene.n_edges else 0.0
    ws = model.n_keypoints / scene.n_sym * betas.s.peak / wk if scene.n_sym else 0.0
    return we, ws


# --- Monte Carlo ----------------------------------------------------------------

def perturb_scene(scene: Scene, noise: NoiseModel, rng) -> Scene:
    """Gaussian noise on keypoints, edge vectors and the second point of each symmetry pair."""
    kp = scene.keypoints + rng.normal(scale=noise.sigma_k, size=scene.keypoints.shape)
    ed = scene.edges + rng.normal(scale=noise.sigma_e, size=scene.edges.shape)
    q2 = scene.sym_q2 + rng.normal(scale=noise.sigma_s, size=scene.sym_q2.shape)
    return scene.replace(keypoints=kp, edges=ed, sym_q2=q2)


def monte_carlo_covariance(model: ObjectModel, gt_pose: Pose, noise: NoiseModel, trials: int, seed: int = 0,
                           base_scene: Optional[Scene] = None, betas: RobustBetas = RobustBetas.quadratic(),
                           full_result=False):
    """Sample covariance of refined poses (started at ``gt_pose``) over noisy copies of one scene.

    The noiseless ``base_scene`` defaults to one generated from ``seed``; trial
    ``i`` draws its noise from the stream ``(seed, i)``.  Failed trials are
    excluded and counted.
    """
    if trials < 100:
        raise InvalidConfig("need at least 100 trials")
    if base_scene is None:
        base_scene = generate_scene(model, gt_pose, GenConfig(seed=seed))
    cfg = RefineConfig(betas=betas)
    deltas = []
    failures = 0
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        noisy = perturb_scene(base_scene, noise, rng)
        try:
            est = gauss_newton_refine(gt_pose, model, noisy, cfg).pose
        except PoseRegError:
            failures += 1
            continue
        deltas.append(delta_between(gt_pose, est).as_vector())
    D = np.array(deltas).reshape(-1, 6)
    cov = np.cov(D, rowvar=False) if len(D) > 1 else np.zeros((6, 6))
    if full_result:
        return MonteCarloResult(cov, len(D), failures, D)
    return cov


# --- square example -------------------------------------------------------------

SQUARE_IMAGE_POINTS = np.array([(1, 1), (1, 0), (1, -1), (0, 1), (0, -1), (-1, 1), (-1, 0), (-1, -1)], float)


def make_square_model(delta: float) -> ObjectModel:
    """Planar square object (plane z = 0) with eight keypoints on the ``3 x 3`` grid minus its center."""
    kp = np.column_stack([delta * SQUARE_IMAGE_POINTS, np.zeros(8)])
    g = np.linspace(-delta, delta, 9)
    surf = np.array([(x, y, 0.0) for x in g for y in g])
    return ObjectModel.build(kp, SymmetryPlane(np.array([1.0, 0.0, 0.0]), np.zeros(3)), surf,
                             has_pose_ambiguity=True, name="square")


SQUARE_POSE = Pose(np.eye(3), np.array([0.0, 0.0, 1.0]))


def square_scene(delta: float, corr_grid: int = 200) -> tuple:
    """The square model at unit depth with dense symmetry pairs ``(x, y) <-> (-x, y)``.

    Pairs sit at the midpoints of a ``corr_grid x corr_grid`` grid over
    ``0 <= x <= delta, -delta <= y <= delta``.
    """
    model = make_square_model(delta)
    kp = delta * SQUARE_IMAGE_POINTS
    edges = kp[model.edges[:, 1]] - kp[model.edges[:, 0]]
    xs = (np.arange(corr_grid) + 0.5) / corr_grid * delta
    ys = -delta + (np.arange(corr_grid) + 0.5) / corr_grid * 2 * delta
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    q1 = np.column_stack([X.ravel(), Y.ravel()])
    q2 = q1 * np.array([-1.0, 1.0])
    return model, Scene(kp, edges, q1, q2, gt_pose=SQUARE_POSE)


def square_example(delta: float, corr_grid: int = 200) -> SquareExample:
    """``H_K``, ``H_E`` (per-element means of ``J'J``) and the area-normalized ``H_S``."""
    if delta <= 0:
        raise InvalidConfig("delta must be positive")
    if corr_grid < 100:
        raise InvalidConfig("corr_grid must be at least 100")
    model, scene = square_scene(delta, corr_grid)
    jac = analytic_jacobians(SQUARE_POSE, model, scene)
    h_k = np.einsum("kia,kib->ab", jac.keypoint_x, jac.keypoint_x) / model.n_keypoints
    h_e = np.einsum("kia,kib->ab", jac.edge_x, jac.edge_x) / model.n_edges
    # midpoint rule: the mean over the grid is the integral divided by the area
    h_s = jac.sym_x.T @ jac.sym_x / scene.n_sym
    return SquareExample(delta, h_k, h_e, h_s)


def square_closed_forms(delta: float):
    """Closed-form ``H_K`` and ``H_E`` of the square example."""
    d2, d4 = delta ** 2, delta ** 4
    c1 = (8 + 12 * d2 + 10 * d4) / 8
    c2 = (8 + 6 * d2) / 8
    h_k = np.zeros((6, 6))
    h_k[0, 0] = h_k[1, 1] = c1
    h_k[2, 2] = h_k[5, 5] = 12 * d2 / 8
    h_k[3, 3] = h_k[4, 4] = 1.0
    h_k[0, 4] = h_k[4, 0] = -c2
    h_k[1, 3] = h_k[3, 1] = c2
    h_e = np.diag([11 / 7 * d4, 11 / 7 * d4, 24 / 7 * d2, 0.0, 0.0, 24 / 7 * d2])
    return h_k, h_e


def a8_closed_form(delta, sigma_k, sigma_e, beta_e):
    beta_e = np.asarray(beta_e, dtype=float)
    hk, he = 12 / 8 * delta ** 2, 24 / 7 * delta ** 2
    return (sigma_k ** 2 * hk + beta_e ** 2 * sigma_e ** 2 * he) / (hk + beta_e * he) ** 2


def a8_scan(delta, sigma_k, sigma_e, beta_grid) -> A8Scan:
    """Minimize the translation-z variance over ``beta_e``, in closed form and via the covariance."""
    grid = np.asarray(beta_grid, dtype=float)
    closed = a8_closed_form(delta, sigma_k, sigma_e, grid)
    model, scene = square_scene(delta, 100)
    scene = scene.replace(sym_q1=np.zeros((0, 2)), sym_q2=np.zeros((0, 2)))
    stacks = jacobian_stacks(model, SQUARE_POSE, scene)
    noise = NoiseModel(sigma_k, sigma_e, 0.0)
    cov = np.array([_covariance(stacks, b, 0.0, noise)[1][5, 5] for b in grid])
    return A8Scan(grid, closed, cov, float(grid[np.argmin(closed)]), float(grid[np.argmin(cov)]))


# --- derivative checks ------------------------------------------------------------

@dataclass
class VarianceReductionReport:
    derivative_fd: float
    derivative_analytic: float
    trace_at_zero: float
    trace_at_small: float
    independent: bool

    @property
    def reduces(self) -> bool:
        return self.derivative_fd < 0


def variance_reduction_check(model: ObjectModel, gt_pose: Pose, noise: NoiseModel, beta_e_small: float = 1e-6,
                             scene: Optional[Scene] = None, cross_ke=None) -> VarianceReductionReport:
    """Slope of ``trace(Var)`` in ``beta_e`` at ``beta_e = 0+`` (keypoints and edges only)."""
    if scene is None:
        scene = generate_scene(model, gt_pose, GenConfig(n_sym_corrs=0))
    stacks = jacobian_stacks(model, gt_pose, scene)
    _, c0 = _covariance(stacks, 0.0, 0.0, noise, cross_ke)
    _, c1 = _covariance(stacks, beta_e_small, 0.0, noise, cross_ke)
    j_k, j_e, _, d_k, d_e, _ = stacks
    A = j_k @ j_k.T
    Ainv = np.linalg.inv(A)
    nk = j_k.shape[1]
    V = _noise_cov(noise, nk // 2, j_e.shape[1] // 2, cross_ke)
    S_kk = d_k @ V[:nk, :nk] @ d_k.T
    S_ke = d_k @ V[:nk, nk:] @ d_e.T
    Ke = j_e @ j_e.T
    Kk = j_k @ S_kk @ j_k.T
    cross = j_k @ S_ke @ j_e.T
    D = Ainv @ (cross + cross.T - Ke @ Ainv @ Kk - Kk @ Ainv @ Ke) @ Ainv
    return VarianceReductionReport(
        (np.trace(c1) - np.trace(c0)) / beta_e_small, float(np.trace(D)), float(np.trace(c0)),
        float(np.trace(c1)), cross_ke is None or not np.any(cross_ke))


@dataclass
class ImplicitDerivativeReport:
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def relative_error(self) -> float:
        scale = max(np.linalg.norm(self.numeric), np.linalg.norm(self.analytic))
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(self.analytic - self.numeric) / scale)


def _split_direction(scene: Scene, direction):
    d = np.asarray(direction, dtype=float).ravel()
    nk, ne, ns = 2 * scene.n_keypoints, 2 * scene.n_edges, 2 * scene.n_sym
    if d.shape != (nk + ne + ns,):
        raise InvalidConfig(f"direction must have {nk + ne + ns} entries")
    return d[:nk].reshape(-1, 2), d[nk:nk + ne].reshape(-1, 2), d[nk + ne:].reshape(-1, 2)


def implicit_derivative_check(model: ObjectModel, gt_pose: Pose, noise_point, scene: Optional[Scene] = None,
                              step: float = 1e-6, betas: RobustBetas = RobustBetas()) -> ImplicitDerivativeReport:
    """Sensitivity of the refined pose to the observation direction ``noise_point``.

    ``noise_point`` stacks keypoint, edge and second-symmetry-point
    perturbations (2 entries each).  The analytic value solves the implicit
    function equation at the noiseless optimum; the numeric one re-solves the
    refinement at ``+-step`` along the direction.
    """
    if scene is None:
        scene = generate_scene(model, gt_pose, GenConfig())
    dk, de, ds = _split_direction(scene, noise_point)
    beta_e, beta_s = effective_weights(model, scene, betas)
    j_k, j_e, j_s, d_k, d_e, d_s = jacobian_stacks(model, gt_pose, scene)
    A = information_matrix(j_k, j_e, j_s, beta_e, beta_s)
    b = j_k @ d_k @ dk.ravel() + beta_e * (j_e @ d_e @ de.ravel()) + beta_s * (j_s @ np.sum(d_s * ds, axis=1))
    analytic = -np.linalg.solve(A, b)

    cfg = RefineConfig(betas=betas, step_tol=1e-15, max_iters=50)

    def solve(h):
        s = scene.replace(keypoints=scene.keypoints + h * dk, edges=scene.edges + h * de,
                          sym_q2=scene.sym_q2 + h * ds)
        return delta_between(gt_pose, gauss_newton_refine(gt_pose, model, s, cfg).pose).as_vector()

    numeric = (solve(step) - solve(-step)) / (2 * step)
    return ImplicitDerivativeReport(analytic, numeric)


# --- CSV ---------------------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def a8_csv(scan: A8Scan) -> str:
    return _csv(["beta_e", "a8_closed", "a8_covariance"],
                zip(scan.beta_grid.tolist(), scan.a8_closed.tolist(), scan.a8_cov.tolist()))


def square_csv(ex: SquareExample) -> str:
    rows = []
    for name, H in (("H_K", ex.h_k), ("H_E", ex.h_e), ("H_S", ex.h_s)):
        for i in range(6):
            for j in range(6):
                rows.append([name, i, j, float(H[i, j])])
    return _csv(["matrix", "row", "col", "value"], rows)


def covariance_csv(predicted, empirical=None) -> str:
    pd = np.diag(predicted)
    ed = np.diag(empirical) if empirical is not None else np.full(6, np.nan)
    return _csv(["component", "predicted", "empirical"], [[i, float(pd[i]), float(ed[i])] for i in range(6)])
