"""Linear initialization from hybrid constraints.

All three constraint types are linear in ``x = (r1, r2, r3, t)`` where ``r_i``
are the rows of R.  Stacking them gives ``A x = 0``; the pose is taken from the
span of the four trailing right singular vectors of A, combined so that the
rotation block is as close as possible to a rotation, and the translation is
then solved from A with the rotation fixed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSystem, RankDeficientTranslation
from .geometry import ObjectModel, Pose, nearest_rotation
from .observations import Scene, homogeneous

N_BASIS = 4
_Z_IDENTITY = np.array([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


@dataclass(frozen=True)
class ConstraintMatrix:
    a: np.ndarray
    row_scales: tuple
    n_keypoints: int = 0
    n_edges: int = 0
    n_sym: int = 0

    @property
    def rotation_block(self) -> np.ndarray:
        return self.a[:, :9]

    @property
    def translation_block(self) -> np.ndarray:
        return self.a[:, 9:]


@dataclass(frozen=True)
class NullBasis:
    v: np.ndarray  # (4, 12), v[0] has the smallest singular value
    singular_values: np.ndarray  # ascending
    sigma_max: float = 1.0

    def rotation_parts(self) -> np.ndarray:
        """The 3x3 matrices ``R_i`` read row-major from the first 9 entries of ``v_i``."""
        return self.v[:, :9].reshape(-1, 3, 3)

    @property
    def trailing_gap(self) -> float:
        """Ratio of the two smallest singular values; near 1 flags a near-degenerate null space."""
        s = self.singular_values
        return float(s[0] / s[1]) if s[1] > 0 else 1.0


@dataclass(frozen=True)
class GammaCoeffs:
    gamma: np.ndarray
    consistency: float = 0.0


@dataclass
class InitResult:
    pose: Pose
    basis: NullBasis
    gamma0: GammaCoeffs
    gamma: np.ndarray
    objective_trace: list = field(default_factory=list)
    flipped: bool = False


def _lift(points, with_translation=True):
    """Linear maps ``x -> R p (+ t)`` for each point, shape (N, 3, 12)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    L = np.zeros((len(points), 3, 12))
    for i in range(3):
        L[:, i, 3 * i:3 * i + 3] = points
        if with_translation:
            L[:, i, 9 + i] = 1.0
    return L


def _skews(vectors):
    v = np.asarray(vectors, dtype=float).reshape(-1, 3)
    S = np.zeros((len(v), 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -v[:, 2], v[:, 1]
    S[:, 1, 0], S[:, 1, 2] = v[:, 2], -v[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -v[:, 1], v[:, 0]
    return S


def build_constraint_matrix(model: ObjectModel, scene: Scene, alpha_e=1.0, alpha_s=1.0) -> ConstraintMatrix:
    """Stack 3 rows per keypoint, 3 per edge (times alpha_e) and 1 per symmetry pair (times alpha_s)."""
    if alpha_e < 0 or alpha_s < 0:
        raise ValueError("alpha weights must be non-negative")
    scene.check_against(model)
    p_hat = homogeneous(scene.keypoints)
    rows_k = np.einsum("kij,kjl->kil", _skews(p_hat), _lift(model.keypoints)).reshape(-1, 12)

    es, et = model.edges[:, 0], model.edges[:, 1]
    v_hat = np.concatenate([scene.edges, np.zeros((scene.n_edges, 1))], axis=1)
    rows_e = (np.einsum("kij,kjl->kil", _skews(v_hat), _lift(model.keypoints[et]))
              + np.einsum("kij,kjl->kil", _skews(p_hat[es]), _lift(model.edge_vectors, False)))
    rows_e = alpha_e * rows_e.reshape(-1, 12)

    m = np.cross(homogeneous(scene.sym_q1), homogeneous(scene.sym_q2))
    rows_s = np.zeros((scene.n_sym, 12))
    for i in range(3):
        rows_s[:, 3 * i:3 * i + 3] = np.outer(m[:, i], model.symmetry.normal)
    rows_s *= alpha_s

    a = np.vstack([rows_k, rows_e, rows_s])
    return ConstraintMatrix(a, (float(alpha_e), float(alpha_s)), model.n_keypoints, scene.n_edges, scene.n_sym)


def null_basis(cm: ConstraintMatrix) -> NullBasis:
    a = cm.a if isinstance(cm, ConstraintMatrix) else np.asarray(cm, dtype=float)
    if a.shape[0] < 12:
        raise DegenerateSystem(f"constraint matrix has {a.shape[0]} rows; need at least 12")
    _, s, vt = np.linalg.svd(a, full_matrices=False)
    smax = s[0]
    if smax == 0 or np.sum(s > 1e-12 * smax) < 12 - N_BASIS:
        raise DegenerateSystem("constraint matrix rank is below 8")
    v = vt[::-1][:N_BASIS].copy()
    return NullBasis(v, s[::-1][:N_BASIS].copy(), float(smax))


def _orthogonality_system(Rs):
    """6x6 matrix C with ``C y = upper(M'M)`` for ``M = sum gamma_i R_i``, i < 3."""
    C = np.zeros((6, 6))
    for col, (i, j) in enumerate(_PAIRS):
        P = Rs[i].T @ Rs[j]
        if i != j:
            P = P + P.T
        C[:, col] = [P[a, b] for a, b in _PAIRS]
    return C


def gammas_from_y(y):
    """Recover ``(gamma1, gamma2, gamma3, 0)`` from the lifted vector and report its inconsistency."""
    y = np.asarray(y, dtype=float)
    if y[0] > 1e-16:
        g1 = np.sqrt(y[0])
    else:
        g1 = 0.0
    if g1 > 1e-8:
        gamma = np.array([g1, y[1] / g1, y[2] / g1, 0.0])
    else:
        gamma = np.array([1.0, 0.0, 0.0, 0.0])
    g2, g3 = gamma[1], gamma[2]
    consistency = abs(g2 * g2 - y[3]) + abs(g2 * g3 - y[4]) + abs(g3 * g3 - y[5])
    return gamma, float(consistency)


def init_gammas(basis: NullBasis) -> GammaCoeffs:
    """Seed coefficients from the orthogonality of ``sum_{i<=3} gamma_i R_i``."""
    Rs = basis.rotation_parts()
    C = _orthogonality_system(Rs[:3])
    y = np.linalg.lstsq(C, _Z_IDENTITY, rcond=None)[0]
    gamma, consistency = gammas_from_y(y)
    M = np.tensordot(gamma, Rs, axes=1)
    if np.linalg.det(M) < 0:
        gamma = -gamma
    return GammaCoeffs(gamma, consistency)


def alternating_fit(basis: NullBasis, gamma0: GammaCoeffs, max_iters=100, tol=1e-12):
    """Alternate rotation projection and least-squares coefficients.

    Returns ``(R, gamma, objective_trace)``; the trace holds
    ``||sum gamma_i R_i - R||_F`` after each coefficient update.
    """
    Rs = basis.rotation_parts()
    B = Rs.reshape(len(Rs), 9).T
    B_pinv = np.linalg.pinv(B)
    gamma = np.asarray(getattr(gamma0, "gamma", gamma0), dtype=float).copy()
    trace = []
    for _ in range(max_iters):
        r = nearest_rotation((B @ gamma).reshape(3, 3)).reshape(9)
        new = B_pinv @ r
        trace.append(float(np.linalg.norm(B @ new - r)))
        step = np.linalg.norm(new - gamma)
        gamma = new
        if step < tol:
            break
    R = nearest_rotation((B @ gamma).reshape(3, 3))
    return R, gamma, trace


def recover_translation(cm: ConstraintMatrix, rot) -> np.ndarray:
    """Least-squares ``t`` in ``A1 r + A2 t = 0`` with ``r`` the row-major rotation."""
    a = cm.a if isinstance(cm, ConstraintMatrix) else np.asarray(cm, dtype=float)
    A1, A2 = a[:, :9], a[:, 9:]
    s = np.linalg.svd(A2, compute_uv=False)
    if s[0] == 0 or s[-1] < 1e-10 * s[0]:
        raise RankDeficientTranslation("translation columns of the constraint matrix are rank deficient")
    return -np.linalg.lstsq(A2, A1 @ np.asarray(rot, dtype=float).reshape(9), rcond=None)[0]


def _mean_depth(model: ObjectModel, R, t) -> float:
    return float(np.mean(model.keypoints @ R[2] + t[2]))


def algebraic_cost(cm: ConstraintMatrix, R, t) -> float:
    """``||A x||`` for ``x = (rows of R, t)``."""
    return float(np.linalg.norm(cm.a @ np.concatenate([np.asarray(R).reshape(9), t])))


def _seed_from_smallest(basis: NullBasis) -> GammaCoeffs:
    gamma = np.array([1.0, 0.0, 0.0, 0.0])
    if np.linalg.det(basis.rotation_parts()[0]) < 0:
        gamma = -gamma
    return GammaCoeffs(gamma)


def initialize(model: ObjectModel, scene: Scene, alpha_e=1.0, alpha_s=1.0, max_iters=100, tol=1e-12) -> InitResult:
    cm = build_constraint_matrix(model, scene, alpha_e, alpha_s)
    basis = null_basis(cm)
    g0 = init_gammas(basis)
    # The orthogonality seed can land in a poor basin when the lifted system is
    # inconsistent, so the smallest-singular-vector seed is tried too; the
    # negated seeds cover the sign ambiguity of the null vectors.  Candidates in
    # front of the camera win, then the smallest algebraic residual.
    g1 = _seed_from_smallest(basis)
    best = None
    for seeds in (((g0, False), (g1, False)), ((GammaCoeffs(-g0.gamma), True), (GammaCoeffs(-g1.gamma), True))):
        for seed, negated in seeds:
            R, gamma, trace = alternating_fit(basis, seed, max_iters, tol)
            t = recover_translation(cm, R)
            key = (_mean_depth(model, R, t) <= 0, algebraic_cost(cm, R, t))
            if best is None or key < best[0]:
                best = (key, R, t, gamma, trace, negated)
        if not best[0][0]:
            break
    _, R, t, gamma, trace, flipped = best
    return InitResult(Pose(R, t), basis, g0, gamma, trace, flipped)


def initialize_pose(model: ObjectModel, scene: Scene, alpha_e=1.0, alpha_s=1.0) -> Pose:
    return initialize(model, scene, alpha_e, alpha_s).pose
