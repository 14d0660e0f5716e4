# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner-loop kernels: flock dynamics terms and ADMM iterations.

Signatures match shepherd._kernels_py; the backend selector prefers this
module when the extension built.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport cosh, sqrt, tanh

cnp.import_array()

from shepherd._kernels_py import CoincidentAgentsError


def flock_terms(sheep_in, dogs_in, double k_s, double k_d, double r_s,
                double v_bar, double eps, bint want_jacobians):
    cdef cnp.ndarray[double, ndim=2] sheep = np.ascontiguousarray(sheep_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] dogs = np.ascontiguousarray(
        np.asarray(dogs_in, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t n = sheep.shape[0]
    cdef Py_ssize_t m = dogs.shape[0]

    cdef cnp.ndarray[double, ndim=2] raw = np.zeros((n, 2))
    cdef cnp.ndarray[double, ndim=2] vel = np.zeros((n, 2))
    cdef Py_ssize_t i, k, j
    cdef double dx, dy, dist, dist3, w, rs3 = r_s * r_s * r_s
    cdef int bad = 0

    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            dx = sheep[k, 0] - sheep[i, 0]
            dy = sheep[k, 1] - sheep[i, 1]
            dist = sqrt(dx * dx + dy * dy)
            if dist < eps:
                bad = 1
                break
            dist3 = dist * dist * dist
            w = 1.0 - rs3 / dist3
            raw[i, 0] += k_s * w * dx
            raw[i, 1] += k_s * w * dy
        if bad:
            raise CoincidentAgentsError(f"sheep pair closer than {eps:g} m")
        for j in range(m):
            dx = sheep[i, 0] - dogs[j, 0]
            dy = sheep[i, 1] - dogs[j, 1]
            dist = sqrt(dx * dx + dy * dy)
            if dist < eps:
                raise CoincidentAgentsError(f"sheep-dog pair closer than {eps:g} m")
            dist3 = dist * dist * dist
            raw[i, 0] += k_d * dx / dist3
            raw[i, 1] += k_d * dy / dist3
        vel[i, 0] = v_bar * tanh(raw[i, 0] / v_bar)
        vel[i, 1] = v_bar * tanh(raw[i, 1] / v_bar)

    if not want_jacobians:
        return vel, raw, None, None

    cdef cnp.ndarray[double, ndim=2] sat = np.zeros((n, 2))
    for i in range(n):
        sat[i, 0] = 1.0 / (cosh(raw[i, 0] / v_bar) ** 2)
        sat[i, 1] = 1.0 / (cosh(raw[i, 1] / v_bar) ** 2)

    cdef cnp.ndarray[double, ndim=4] jac_s = np.zeros((n, n, 2, 2))
    cdef cnp.ndarray[double, ndim=4] jac_d = np.zeros((n, m, 2, 2))
    cdef double dist5, g00, g01, g10, g11

    for i in range(n):
        for k in range(n):
            if k == i:
                continue
            dx = sheep[k, 0] - sheep[i, 0]
            dy = sheep[k, 1] - sheep[i, 1]
            dist = sqrt(dx * dx + dy * dy)
            dist3 = dist * dist * dist
            dist5 = dist3 * dist * dist
            w = 1.0 - rs3 / dist3
            g00 = k_s * (w + 3.0 * rs3 * dx * dx / dist5)
            g01 = k_s * (3.0 * rs3 * dx * dy / dist5)
            g10 = g01
            g11 = k_s * (w + 3.0 * rs3 * dy * dy / dist5)
            jac_s[i, k, 0, 0] = sat[i, 0] * g00
            jac_s[i, k, 0, 1] = sat[i, 0] * g01
            jac_s[i, k, 1, 0] = sat[i, 1] * g10
            jac_s[i, k, 1, 1] = sat[i, 1] * g11
        for j in range(m):
            dx = sheep[i, 0] - dogs[j, 0]
            dy = sheep[i, 1] - dogs[j, 1]
            dist = sqrt(dx * dx + dy * dy)
            dist3 = dist * dist * dist
            dist5 = dist3 * dist * dist
            g00 = -k_d * (1.0 / dist3 - 3.0 * dx * dx / dist5)
            g01 = -k_d * (-3.0 * dx * dy / dist5)
            g10 = g01
            g11 = -k_d * (1.0 / dist3 - 3.0 * dy * dy / dist5)
            jac_d[i, j, 0, 0] = sat[i, 0] * g00
            jac_d[i, j, 0, 1] = sat[i, 0] * g01
            jac_d[i, j, 1, 0] = sat[i, 1] * g10
            jac_d[i, j, 1, 1] = sat[i, 1] * g11

    return vel, raw, jac_s, jac_d


def admm_chunk(chol_in, a_in, q_in, lo_in, hi_in, double rho, double sigma,
               double relax, x_in, z_in, y_in, Py_ssize_t iters):
    cdef cnp.ndarray[double, ndim=2] chol = np.ascontiguousarray(chol_in)
    cdef cnp.ndarray[double, ndim=2] a_mat = np.ascontiguousarray(a_in)
    cdef cnp.ndarray[double, ndim=1] q = np.ascontiguousarray(q_in)
    cdef cnp.ndarray[double, ndim=1] lo = np.ascontiguousarray(lo_in)
    cdef cnp.ndarray[double, ndim=1] hi = np.ascontiguousarray(hi_in)
    cdef cnp.ndarray[double, ndim=1] x = x_in
    cdef cnp.ndarray[double, ndim=1] z = z_in
    cdef cnp.ndarray[double, ndim=1] y = y_in

    cdef Py_ssize_t d = x.shape[0]
    cdef Py_ssize_t rows = a_mat.shape[0]
    cdef cnp.ndarray[double, ndim=1] rhs = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] z_hat = np.zeros(rows)
    cdef Py_ssize_t it, r, c
    cdef double acc, zt, zh, znew

    for it in range(iters):
        for c in range(d):
            rhs[c] = sigma * x[c] - q[c]
        for r in range(rows):
            acc = rho * z[r] - y[r]
            for c in range(d):
                rhs[c] += a_mat[r, c] * acc
        # forward substitution L w = rhs (in place)
        for r in range(d):
            acc = rhs[r]
            for c in range(r):
                acc -= chol[r, c] * rhs[c]
            rhs[r] = acc / chol[r, r]
        # back substitution L^T x_tilde = w (in place)
        for r in range(d - 1, -1, -1):
            acc = rhs[r]
            for c in range(r + 1, d):
                acc -= chol[c, r] * rhs[c]
            rhs[r] = acc / chol[r, r]
        for c in range(d):
            x[c] = relax * rhs[c] + (1.0 - relax) * x[c]
        for r in range(rows):
            zt = 0.0
            for c in range(d):
                zt += a_mat[r, c] * rhs[c]
            zh = relax * zt + (1.0 - relax) * z[r]
            znew = zh + y[r] / rho
            if znew < lo[r]:
                znew = lo[r]
            elif znew > hi[r]:
                znew = hi[r]
            z[r] = znew
            y[r] += rho * (zh - znew)
