# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled ADMM inner loop: the hot kernel of the QP solver.

Same contract as ``mpsf._qp_kernel_py.run_iters``; selected at import time by
``mpsf.optimizer`` when available.  Rows [ball_start, ball_start + ball_len)
are projected jointly onto a Euclidean ball instead of the box.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemv, dtrsv

cnp.import_array()


def run_iters(double[:, ::1] L, double[:, ::1] C, double[::1] g,
              double[::1] lb, double[::1] ub, double[::1] rho,
              double sigma, double alpha,
              double[::1] x, double[::1] z, double[::1] y,
              int niter, double[::1] y_delta_out,
              int ball_start=-1, int ball_len=0, double ball_radius=0.0):
    cdef int d = x.shape[0]
    cdef int p = z.shape[0]
    cdef int it, i
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef double dy, v, w_rel, nrm, scale
    cdef cnp.ndarray[double, ndim=1] rhs_a = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] zt_a = np.empty(max(p, 1))
    cdef cnp.ndarray[double, ndim=1] tmp_a = np.empty(max(p, 1))
    cdef cnp.ndarray[double, ndim=1] vv_a = np.empty(max(p, 1))
    cdef double[::1] rhs = rhs_a
    cdef double[::1] zt = zt_a
    cdef double[::1] tmp = tmp_a
    cdef double[::1] vv = vv_a

    for it in range(niter):
        # rhs = sigma x - g + C' (rho z - y)
        for i in range(p):
            tmp[i] = rho[i] * z[i] - y[i]
        for i in range(d):
            rhs[i] = sigma * x[i] - g[i]
        if p > 0:
            # C is C-contiguous (p, d); BLAS sees the (d, p) column-major C'.
            dgemv("N", &d, &p, &one, &C[0, 0], &d, &tmp[0], &inc, &one, &rhs[0], &inc)
        # solve L L' xt = rhs in place (BLAS sees row-major L as upper U = L')
        dtrsv("U", "T", "N", &d, &L[0, 0], &d, &rhs[0], &inc)
        dtrsv("U", "N", "N", &d, &L[0, 0], &d, &rhs[0], &inc)
        # zt = C xt
        if p > 0:
            dgemv("T", &d, &p, &one, &C[0, 0], &d, &rhs[0], &inc, &zero, &zt[0], &inc)
        for i in range(d):
            x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i]
        # projection: boxes, then the ball block
        for i in range(p):
            w_rel = alpha * zt[i] + (1.0 - alpha) * z[i]
            tmp[i] = w_rel
            v = w_rel + y[i] / rho[i]
            vv[i] = v
            if v < lb[i]:
                v = lb[i]
            elif v > ub[i]:
                v = ub[i]
            zt[i] = v  # reuse zt as z_new
        if ball_len > 0:
            nrm = 0.0
            for i in range(ball_start, ball_start + ball_len):
                nrm += vv[i] * vv[i]
            nrm = sqrt(nrm)
            if nrm > ball_radius and nrm > 0.0:
                scale = ball_radius / nrm
            else:
                scale = 1.0
            for i in range(ball_start, ball_start + ball_len):
                zt[i] = vv[i] * scale
        for i in range(p):
            dy = rho[i] * (tmp[i] - zt[i])
            if it == niter - 1:
                y_delta_out[i] = dy
            y[i] = y[i] + dy
            z[i] = zt[i]
    return 0
