# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the Gauss-Newton inner loop and ADD-S.

Same signatures and results as ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double MIN_DEPTH = 1e-9


cdef inline void _accumulate(double[:, ::1] H, double[::1] g, double j0[6], double j1[6],
                             double r0, double r1, double w00, double w01, double w11,
                             double extra) noexcept nogil:
    # H += J' W J and g += J' (W + extra I) r for a 2x6 block J with 2x2 weight W;
    # ``extra`` carries the derivative of the robust weight so g is the exact half-gradient
    cdef int a, b
    cdef double u0, u1
    for a in range(6):
        u0 = w00 * j0[a] + w01 * j1[a]
        u1 = w01 * j0[a] + w11 * j1[a]
        g[a] += u0 * r0 + u1 * r1 + extra * (j0[a] * r0 + j1[a] * r1)
        for b in range(a, 6):
            H[a, b] += u0 * j0[b] + u1 * j1[b]


cdef int _project_all(const double[:, ::1] R, const double[::1] t, const double[:, ::1] pts,
                      double[:, ::1] xy, double[::1] Z) noexcept nogil:
    cdef Py_ssize_t k
    cdef double X, Y, W
    for k in range(pts.shape[0]):
        X = R[0, 0] * pts[k, 0] + R[0, 1] * pts[k, 1] + R[0, 2] * pts[k, 2] + t[0]
        Y = R[1, 0] * pts[k, 0] + R[1, 1] * pts[k, 1] + R[1, 2] * pts[k, 2] + t[1]
        W = R[2, 0] * pts[k, 0] + R[2, 1] * pts[k, 1] + R[2, 2] * pts[k, 2] + t[2]
        if not W > MIN_DEPTH:
            return 0
        Z[k] = W
        xy[k, 0] = X / W
        xy[k, 1] = Y / W
    return 1


cdef double _run(const double[:, ::1] R, const double[::1] t, const double[:, ::1] kp3d,
                 const double[:, ::1] kp_obs, const long long[:, ::1] edges,
                 const double[:, ::1] edge_obs, const double[:, ::1] sym_m,
                 const double[::1] nbar, const double[::1] betas, const double[::1] scales,
                 const double[:, :, ::1] cov_k, const double[:, :, ::1] cov_e,
                 double[:, ::1] xy, double[::1] Z,
                 double[:, ::1] H, double[::1] g, bint want_system) noexcept nogil:
    cdef Py_ssize_t k, e, s, a, b, i, j
    cdef Py_ssize_t nk = kp3d.shape[0], ne = edges.shape[0], ns = sym_m.shape[0]
    cdef double f = 0.0, fk = 0.0, fe = 0.0, fs = 0.0
    cdef double r0, r1, w, q, d, u, x, y, iz, rs
    cdef double n0, n1, n2, js0, js1, js2
    cdef double j0[6]
    cdef double j1[6]
    cdef double b1k = betas[0] * betas[0], b2k = betas[1] * betas[1]
    cdef double b1e = betas[2] * betas[2], b2e = betas[3] * betas[3]
    cdef double b1s = betas[4] * betas[4], b2s = betas[5] * betas[5]

    if not _project_all(R, t, kp3d, xy, Z):
        return INFINITY

    for k in range(nk):
        r0 = xy[k, 0] - kp_obs[k, 0]
        r1 = xy[k, 1] - kp_obs[k, 1]
        d = b2k + r0 * r0 + r1 * r1
        w = b1k / d
        q = cov_k[k, 0, 0] * r0 * r0 + 2.0 * cov_k[k, 0, 1] * r0 * r1 + cov_k[k, 1, 1] * r1 * r1
        fk += w * q
        if want_system:
            x = xy[k, 0]
            y = xy[k, 1]
            iz = 1.0 / Z[k]
            j0[0] = -x * y; j0[1] = 1.0 + x * x; j0[2] = -y
            j0[3] = iz; j0[4] = 0.0; j0[5] = -x * iz
            j1[0] = -1.0 - y * y; j1[1] = x * y; j1[2] = x
            j1[3] = 0.0; j1[4] = iz; j1[5] = -y * iz
            w *= scales[0]
            _accumulate(H, g, j0, j1, r0, r1, w * cov_k[k, 0, 0], w * cov_k[k, 0, 1],
                        w * cov_k[k, 1, 1], -scales[0] * b1k * q / (d * d))
    f = scales[0] * fk

    if scales[1] != 0.0:
        for e in range(ne):
            a = edges[e, 0]
            b = edges[e, 1]
            r0 = xy[b, 0] - xy[a, 0] - edge_obs[e, 0]
            r1 = xy[b, 1] - xy[a, 1] - edge_obs[e, 1]
            d = b2e + r0 * r0 + r1 * r1
            w = b1e / d
            q = cov_e[e, 0, 0] * r0 * r0 + 2.0 * cov_e[e, 0, 1] * r0 * r1 + cov_e[e, 1, 1] * r1 * r1
            fe += w * q
            if want_system:
                # J_e = J(e_t) - J(e_s)
                x = xy[b, 0]; y = xy[b, 1]; iz = 1.0 / Z[b]
                j0[0] = -x * y; j0[1] = 1.0 + x * x; j0[2] = -y
                j0[3] = iz; j0[4] = 0.0; j0[5] = -x * iz
                j1[0] = -1.0 - y * y; j1[1] = x * y; j1[2] = x
                j1[3] = 0.0; j1[4] = iz; j1[5] = -y * iz
                x = xy[a, 0]; y = xy[a, 1]; iz = 1.0 / Z[a]
                j0[0] -= -x * y; j0[1] -= 1.0 + x * x; j0[2] -= -y
                j0[3] -= iz; j0[5] -= -x * iz
                j1[0] -= -1.0 - y * y; j1[1] -= x * y; j1[2] -= x
                j1[4] -= iz; j1[5] -= -y * iz
                w *= scales[1]
                _accumulate(H, g, j0, j1, r0, r1, w * cov_e[e, 0, 0], w * cov_e[e, 0, 1],
                            w * cov_e[e, 1, 1], -scales[1] * b1e * q / (d * d))
        f += scales[1] * fe

    if scales[2] != 0.0:
        n0 = R[0, 0] * nbar[0] + R[0, 1] * nbar[1] + R[0, 2] * nbar[2]
        n1 = R[1, 0] * nbar[0] + R[1, 1] * nbar[1] + R[1, 2] * nbar[2]
        n2 = R[2, 0] * nbar[0] + R[2, 1] * nbar[1] + R[2, 2] * nbar[2]
        for s in range(ns):
            rs = sym_m[s, 0] * n0 + sym_m[s, 1] * n1 + sym_m[s, 2] * n2
            d = b2s + rs * rs
            w = b1s / d
            fs += w * rs * rs
            if want_system:
                js0 = n1 * sym_m[s, 2] - n2 * sym_m[s, 1]
                js1 = n2 * sym_m[s, 0] - n0 * sym_m[s, 2]
                js2 = n0 * sym_m[s, 1] - n1 * sym_m[s, 0]
                w *= scales[2]
                u = scales[2] * b1s * b2s * rs / (d * d)
                g[0] += u * js0
                g[1] += u * js1
                g[2] += u * js2
                H[0, 0] += w * js0 * js0
                H[0, 1] += w * js0 * js1
                H[0, 2] += w * js0 * js2
                H[1, 1] += w * js1 * js1
                H[1, 2] += w * js1 * js2
                H[2, 2] += w * js2 * js2
        f += scales[2] * fs

    if want_system:
        for i in range(6):
            for j in range(i):
                H[i, j] = H[j, i]
    return f


def _prep(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e):
    return (np.ascontiguousarray(R, dtype=np.float64), np.ascontiguousarray(t, dtype=np.float64),
            np.ascontiguousarray(kp3d, dtype=np.float64), np.ascontiguousarray(kp_obs, dtype=np.float64),
            np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2),
            np.ascontiguousarray(edge_obs, dtype=np.float64).reshape(-1, 2),
            np.ascontiguousarray(sym_m, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(nbar, dtype=np.float64), np.ascontiguousarray(betas, dtype=np.float64),
            np.ascontiguousarray(scales, dtype=np.float64),
            np.ascontiguousarray(cov_k, dtype=np.float64).reshape(-1, 2, 2),
            np.ascontiguousarray(cov_e, dtype=np.float64).reshape(-1, 2, 2))


def _call(args, bint want_system):
    R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e = args
    n = kp3d.shape[0]
    xy = np.empty((n, 2))
    Z = np.empty(n)
    H = np.zeros((6, 6))
    g = np.zeros(6)
    f = _run(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e,
             xy, Z, H, g, want_system)
    return f, H, g


def robust_value(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e):
    """Robust objective; ``inf`` when a keypoint is not in front of the camera."""
    f, _, _ = _call(_prep(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales,
                          cov_k, cov_e), False)
    return float(f)


def robust_system(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales, cov_k, cov_e):
    """Objective, frozen-weight normal matrix and half-gradient ``(f, H, g, ok)``."""
    f, H, g = _call(_prep(R, t, kp3d, kp_obs, edges, edge_obs, sym_m, nbar, betas, scales,
                          cov_k, cov_e), True)
    if f == INFINITY:
        return np.inf, np.zeros((6, 6)), np.zeros(6), False
    return float(f), H, g, True


def mean_closest_distance(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double best, d, dx, dy, dz, total = 0.0
    with nogil:
        for i in range(A.shape[0]):
            best = INFINITY
            for j in range(B.shape[0]):
                dx = A[i, 0] - B[j, 0]
                dy = A[i, 1] - B[j, 1]
                dz = A[i, 2] - B[j, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < best:
                    best = d
            total += sqrt(best)
    return total / A.shape[0]
