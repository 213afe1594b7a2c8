# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-node loop for the committee-machine misclassification cost.

Mirrors :func:`olahgp._kernels_py.bcm_cost_grad`; one pass over the grid
nodes with no temporaries beyond two length-N work vectors.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, erfc, sqrt, INFINITY, isfinite

cnp.import_array()

cdef double INV_SQRT2 = 0.70710678118654752440
cdef double INV_SQRT2PI = 0.39894228040143267794


def bcm_cost_grad(const double[::1] axis, const double[::1] absdev,
                  const double[::1] prec_d, R, a_chol,
                  double sigma2, double ell, bint want_grad=True):
    cdef const double[:, ::1] r = np.ascontiguousarray(R, dtype=np.float64)
    ainv_arr = np.linalg.inv(np.asarray(a_chol, dtype=np.float64))
    ainv_arr = np.ascontiguousarray(ainv_arr.T @ ainv_arr)
    cdef const double[:, ::1] Ai = ainv_arr
    cdef Py_ssize_t n = axis.shape[0]
    cdef Py_ssize_t N = r.shape[0]
    cdef double il2 = 1.0 / (ell * ell)
    cdef double[:, ::1] ex = np.empty((N, n))
    cdef double[:, ::1] ey = np.empty((N, n))
    cdef double[::1] b = np.empty(N)
    cdef double[::1] c = np.empty(N)
    cdef double[:, ::1] M = np.zeros((N, N))
    gout = np.zeros((N, 2))
    cdef double[:, ::1] g = gout
    cdef Py_ssize_t x, j, k, ix, iy
    cdef double px, py, dx, dy, s, var_r, prec, var, t, p, dp, w, a
    cdef double total = 0.0

    for j in range(N):
        for ix in range(n):
            dx = axis[ix] - r[j, 0]
            dy = axis[ix] - r[j, 1]
            ex[j, ix] = exp(-0.5 * dx * dx * il2)
            ey[j, ix] = sigma2 * exp(-0.5 * dy * dy * il2)

    for x in range(n * n):
        iy = x // n
        ix = x - iy * n
        px = axis[ix]
        py = axis[iy]
        a = absdev[x]
        for j in range(N):
            b[j] = ey[j, iy] * ex[j, ix]
        # c = A^{-1} b
        var_r = sigma2
        for j in range(N):
            s = 0.0
            for k in range(N):
                s += Ai[j, k] * b[k]
            c[j] = s
            var_r -= b[j] * s
        if var_r > 0:
            prec = prec_d[x] + 1.0 / var_r
        else:
            prec = INFINITY
        if isfinite(prec):
            var = 1.0 / prec
        else:
            var = 0.0
        if a > 0:
            if var > 0:
                t = a / sqrt(var)
                p = 0.5 * erfc(t * INV_SQRT2)
                dp = INV_SQRT2PI * exp(-0.5 * t * t) * t / (2.0 * var)
            else:
                p = 0.0
                dp = 0.0
        else:
            p = 0.5
            dp = 0.0
        total += p
        if not want_grad or dp <= 0 or var_r <= 0:
            continue
        w = dp * (var / var_r) * (var / var_r)
        for j in range(N):
            s = w * c[j] * b[j]
            g[j, 0] += s * (px - r[j, 0])
            g[j, 1] += s * (py - r[j, 1])
            for k in range(j + 1):
                M[j, k] += w * c[j] * c[k]

    if not want_grad:
        return total, None
    for j in range(N):
        for k in range(N):
            if k == j:
                continue
            dx = r[j, 0] - r[k, 0]
            dy = r[j, 1] - r[k, 1]
            s = sigma2 * exp(-0.5 * (dx * dx + dy * dy) * il2)
            if k < j:
                s *= M[j, k]
            else:
                s *= M[k, j]
            g[j, 0] += s * dx
            g[j, 1] += s * dy
    for j in range(N):
        g[j, 0] *= -2.0 * il2
        g[j, 1] *= -2.0 * il2
    return total, gout
