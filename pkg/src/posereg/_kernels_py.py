"""Pure-numpy kernels; reference behaviour for the compiled ``_kernels`` module."""
import numpy as np

MIN_DEPTH = 1e-9


def _project(R, t, pts):
    X = pts @ R.T + t
    Z = X[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return X[:, :2] / Z[:, None], Z


def _terms(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, cov_k, cov_e):
    proj, Z = _project(R, t, kp3d)
    rk = proj - kp_obs
    re = proj[edges[:, 1]] - proj[edges[:, 0]] - edge_obs
    rs = sym_m @ (R @ nbar)
    wk = betas[0] ** 2 / (betas[1] ** 2 + np.sum(rk * rk, axis=1))
    we = betas[2] ** 2 / (betas[3] ** 2 + np.sum(re * re, axis=1))
    ws = betas[4] ** 2 / (betas[5] ** 2 + rs * rs)
    return proj, Z, rk, re, rs, wk, we, ws


def robust_value(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e):
    """Robust objective; ``inf`` when a keypoint is not in front of the camera."""
    _, Z, rk, re, rs, wk, we, ws = _terms(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar,
                                          betas, cov_k, cov_e)
    if len(Z) and not np.all(Z > MIN_DEPTH):
        return np.inf
    f = scales[0] * np.sum(wk * np.einsum("ki,kij,kj->k", rk, cov_k, rk))
    if scales[1] != 0.0:
        f += scales[1] * np.sum(we * np.einsum("ki,kij,kj->k", re, cov_e, re))
    if scales[2] != 0.0:
        f += scales[2] * np.sum(ws * rs * rs)
    return float(f)


def robust_system(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e):
    """Objective, frozen-weight normal matrix and half-gradient ``(f, H, g, ok)``.

    ``H = sum w J' S J`` with the GM weights frozen; ``g`` is half the exact
    gradient of the robust objective, so ``-H^{-1} g`` is a descent direction.
    """
    proj, Z, rk, re, rs, wk, we, ws = _terms(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar,
                                             betas, cov_k, cov_e)
    H = np.zeros((6, 6))
    g = np.zeros(6)
    if len(Z) and not np.all(Z > MIN_DEPTH):
        return np.inf, H, g, False
    x, y = proj[:, 0], proj[:, 1]
    iz = 1.0 / Z
    J = np.zeros((len(x), 2, 6))
    J[:, 0, 0] = -x * y
    J[:, 0, 1] = 1.0 + x * x
    J[:, 0, 2] = -y
    J[:, 0, 3] = iz
    J[:, 0, 5] = -x * iz
    J[:, 1, 0] = -1.0 - y * y
    J[:, 1, 1] = x * y
    J[:, 1, 2] = x
    J[:, 1, 4] = iz
    J[:, 1, 5] = -y * iz

    f = 0.0
    groups = [(J, rk, wk, cov_k, scales[0], betas[0])]
    if scales[1] != 0.0 and len(re):
        groups.append((J[edges[:, 1]] - J[edges[:, 0]], re, we, cov_e, scales[1], betas[2]))
    for Jg, r, w, cov, scale, b1 in groups:
        q = np.einsum("ki,kij,kj->k", r, cov, r)
        f += scale * np.sum(w * q)
        WS = (scale * w)[:, None, None] * cov
        H += np.einsum("kia,kij,kjb->ab", Jg, WS, Jg)
        # d/dr of the weight: g is the exact half-gradient of f
        extra = -scale * b1 ** 2 * q * (w / b1 ** 2) ** 2
        g += np.einsum("kia,kij,kj->a", Jg, WS, r) + np.einsum("kia,k,ki->a", Jg, extra, r)
    if scales[2] != 0.0 and len(rs):
        Js = np.cross(R @ nbar, sym_m)
        w = scales[2] * ws
        f += np.sum(w * rs * rs)
        H[:3, :3] += (Js * w[:, None]).T @ Js
        d = betas[5] ** 2 + rs * rs
        g[:3] += Js.T @ (scales[2] * betas[4] ** 2 * betas[5] ** 2 * rs / (d * d))
    return float(f), H, g, True


def mean_closest_distance(a, b):
    """Mean over rows of ``a`` of the distance to the nearest row of ``b``."""
    total = 0.0
    for start in range(0, len(a), 128):
        diff = a[start:start + 128, None, :] - b[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).min(axis=1)).sum()
    return total / len(a)
