"""Pure-numpy ADMM inner loop; fallback when the compiled kernel is absent.

Mirrors the signature of ``mpsf._qp_core.run_iters`` exactly: runs ``niter``
over-relaxed ADMM iterations in place and reports the dual change of the final
iteration (used by the infeasibility certificate).  Rows
``[ball_start, ball_start + ball_len)`` are projected jointly onto the
Euclidean ball of radius ``ball_radius`` instead of the box.
"""
import numpy as np
from scipy.linalg import solve_triangular


def run_iters(L, C, g, lb, ub, rho, sigma, alpha, x, z, y, niter, y_delta_out,
              ball_start=-1, ball_len=0, ball_radius=0.0):
    """Run ``niter`` ADMM iterations in place on (x, z, y).

    L is the lower Cholesky factor of (H + sigma I + C' diag(rho) C); rho is a
    per-row penalty vector.  All arrays are float64 and modified in place.
    """
    bs, bl = ball_start, ball_len
    for it in range(niter):
        rhs = sigma * x - g + C.T @ (rho * z - y)
        w = solve_triangular(L, rhs, lower=True, check_finite=False)
        xt = solve_triangular(L, w, lower=True, trans="T", check_finite=False)
        zt = C @ xt
        x *= 1.0 - alpha
        x += alpha * xt
        w_relaxed = alpha * zt + (1.0 - alpha) * z
        v = w_relaxed + y / rho
        z_new = np.clip(v, lb, ub)
        if bl > 0:
            block = v[bs:bs + bl]
            nrm = np.linalg.norm(block)
            if nrm > ball_radius:
                z_new[bs:bs + bl] = block * (ball_radius / nrm)
            else:
                z_new[bs:bs + bl] = block
        if it == niter - 1:
            y_delta_out[:] = rho * (w_relaxed - z_new)
        y += rho * (w_relaxed - z_new)
        z[:] = z_new
    return 0
