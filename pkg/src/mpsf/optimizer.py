"""Dense convex QP solver (operator splitting) and an SQP layer on top.

The QP solver is an over-relaxed ADMM iteration with Ruiz equilibration,
periodic residual checks, primal-infeasibility certificates, and an
active-set polish step.  The hot per-iteration loop lives in the compiled
extension ``mpsf._qp_core`` when built, with a pure-numpy fallback; set
``MPSF_QP_BACKEND=python`` to force the fallback.

The SQP layer solves receding-horizon programs whose dynamics (and terminal
ellipsoid) may be nonlinear, by repeated linearization with a trust region and
an l1 merit test.  For exactly linear models the first subproblem is already
exact and a single iteration suffices.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, LinAlgError

if os.environ.get("MPSF_QP_BACKEND", "").lower() == "python":
    from mpsf import _qp_kernel_py as _kernel
    QP_BACKEND = "python"
else:
    try:
        from mpsf import _qp_core as _kernel
        QP_BACKEND = "cython"
    except ImportError:
        from mpsf import _qp_kernel_py as _kernel
        QP_BACKEND = "python"

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

_INF = np.inf


@dataclass
class DenseQp:
    """minimize 1/2 z'Hz + g'z  subject to  lb <= Cz <= ub.

    An optional row block [ball_start, ball_start + ball_len) is constrained to
    the Euclidean ball of radius ball_radius instead of the box (used for
    terminal ellipsoids: ||P^{1/2} x_H|| <= sqrt(alpha)); those rows carry
    infinite box bounds.
    """

    H: np.ndarray
    g: np.ndarray
    C: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    ball_start: int = -1
    ball_len: int = 0
    ball_radius: float = 0.0

    def __post_init__(self):
        self.H = np.ascontiguousarray(0.5 * (np.asarray(self.H, float)
                                             + np.asarray(self.H, float).T))
        self.g = np.ascontiguousarray(np.asarray(self.g, float).ravel())
        d = self.g.shape[0]
        self.C = np.ascontiguousarray(np.asarray(self.C, float).reshape(-1, d))
        self.lb = np.ascontiguousarray(np.asarray(self.lb, float).ravel())
        self.ub = np.ascontiguousarray(np.asarray(self.ub, float).ravel())
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")


@dataclass
class QpSolution:
    z: np.ndarray
    lam: np.ndarray
    status: str
    kkt_residual: float
    iterations: int = 0
    outer_iterations: int = 1
    objective: float = np.nan


@dataclass
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20_000
    sigma: float = 1e-6
    alpha: float = 1.6
    rho: float = 0.1
    eq_rho_scale: float = 1e3
    check_every: int = 25
    ruiz_iters: int = 10
    eps_pinf: float = 1e-4
    polish: bool = True
    polish_reg: float = 1e-9
    kkt_target: float = 1e-6


def kkt_error(H, g, C, lb, ub, z, lam, ball=(-1, 0, 0.0)):
    """Unscaled KKT residual: stationarity, primal violation, complementarity.

    Complementarity uses the min form min(|lam_i|, active-side slack), which is
    zero exactly when each multiplier pairs with a tight constraint.  The ball
    block contributes ||s_ball|| - r as violation and min(||lam_ball||,
    r - ||s_ball||) as complementarity.
    """
    r_stat = float(np.abs(H @ z + g + (C.T @ lam if C.size else 0.0)).max()) \
        if z.size else 0.0
    if C.size == 0:
        return r_stat
    bs, bl, br = ball
    s = C @ z
    box = np.ones(s.shape[0], dtype=bool)
    r_prim = 0.0
    comp = 0.0
    if bl > 0:
        box[bs:bs + bl] = False
        s_b = s[bs:bs + bl]
        nrm = float(np.linalg.norm(s_b))
        r_prim = max(r_prim, nrm - br)
        comp = max(comp, min(float(np.linalg.norm(lam[bs:bs + bl])),
                             max(0.0, br - nrm)))
    viol = np.maximum(0.0, np.maximum(lb[box] - s[box], s[box] - ub[box]))
    if viol.size:
        r_prim = max(r_prim, float(viol.max()))
    for i in np.flatnonzero(box):
        if lam[i] > 0.0:
            gap = max(0.0, ub[i] - s[i]) if np.isfinite(ub[i]) else abs(lam[i])
            comp = max(comp, min(lam[i], gap))
        elif lam[i] < 0.0:
            gap = max(0.0, s[i] - lb[i]) if np.isfinite(lb[i]) else abs(lam[i])
            comp = max(comp, min(-lam[i], gap))
    return max(r_stat, r_prim, comp)


def _ruiz_equilibrate(H, g, C, lb, ub, iters, ball=(-1, 0)):
    """Modified Ruiz scaling of the stacked problem data.

    Returns scaled copies plus the diagonal scalings (d_vec, e_vec) and the
    cost scale c such that z = d_vec * z_s and lam = (e_vec / c) * lam_s.
    Ball-block rows share one common row scale so the ball stays a ball.
    """
    d = H.shape[0]
    p = C.shape[0]
    Hs, gs, Cs = H.copy(), g.copy(), C.copy()
    lbs, ubs = lb.copy(), ub.copy()
    d_vec = np.ones(d)
    e_vec = np.ones(p)
    c = 1.0
    bs, bl = ball
    for _ in range(iters):
        col_h = np.abs(Hs).max(axis=0) if d else np.zeros(0)
        col_c = np.abs(Cs).max(axis=0) if p else np.zeros(d)
        col = np.maximum(col_h, col_c)
        col[col == 0.0] = 1.0
        delta_d = 1.0 / np.sqrt(col)
        row = np.abs(Cs).max(axis=1) if p else np.zeros(0)
        row[row == 0.0] = 1.0
        delta_e = 1.0 / np.sqrt(row)
        if bl > 0:
            delta_e[bs:bs + bl] = np.exp(np.mean(np.log(delta_e[bs:bs + bl])))
        Hs *= delta_d[:, None] * delta_d[None, :]
        gs *= delta_d
        if p:
            Cs *= delta_e[:, None] * delta_d[None, :]
            with np.errstate(invalid="ignore"):
                lbs *= delta_e
                ubs *= delta_e
        d_vec *= delta_d
        e_vec *= delta_e
        # cost normalization
        col_h = np.abs(Hs).max(axis=0)
        gamma = 1.0 / max(np.mean(col_h) if d else 1.0, np.abs(gs).max() if gs.size else 0.0, 1e-12)
        Hs *= gamma
        gs *= gamma
        c *= gamma
    return Hs, gs, Cs, lbs, ubs, d_vec, e_vec, c


def _factor(Hs, Cs, rho_vec, sigma):
    M = Hs + sigma * np.eye(Hs.shape[0])
    if Cs.size:
        M = M + (Cs.T * rho_vec) @ Cs
    return np.ascontiguousarray(cholesky(M, lower=True, check_finite=False))


def _primal_infeasible(C, lb, ub, dy, eps, ball=(-1, 0, 0.0)):
    """OSQP-style certificate test on a dual direction dy.

    Evaluated in the equilibrated space, where row/column norms are near one
    and the direction test is numerically meaningful.
    """
    norm_dy = np.abs(dy).max() if dy.size else 0.0
    if norm_dy <= 1e-14:
        return False
    if np.abs(C.T @ dy).max() > eps * norm_dy:
        return False
    bs, bl, br = ball
    box = np.ones(dy.shape[0], dtype=bool)
    support = 0.0
    if bl > 0:
        box[bs:bs + bl] = False
        support += br * float(np.linalg.norm(dy[bs:bs + bl]))
    dy_pos = np.maximum(dy, 0.0)
    dy_neg = np.minimum(dy, 0.0)
    # components pushing on infinite bounds disqualify the certificate
    inf_u = ~np.isfinite(ub) & box
    inf_l = ~np.isfinite(lb) & box
    if np.any(dy_pos[inf_u] > eps * norm_dy) or np.any(-dy_neg[inf_l] > eps * norm_dy):
        return False
    fin_u = box & np.isfinite(ub)
    fin_l = box & np.isfinite(lb)
    support += float(np.sum(ub[fin_u] * dy_pos[fin_u])
                     + np.sum(lb[fin_l] * dy_neg[fin_l]))
    return support <= -eps * norm_dy


def _polish_candidate(qp, low, upp, ball_dir, settings):
    """Re-solve the KKT system treating the given rows as active.

    ``ball_dir`` is None when the ball block is inactive; otherwise the unit
    outward direction of the active ball constraint, which contributes one
    linearized row n' C_ball z = r with a scalar multiplier.
    """
    p = qp.C.shape[0]
    d = qp.H.shape[0]
    eq = (qp.lb == qp.ub) & np.isfinite(qp.lb)
    active = np.flatnonzero(eq | low | upp)
    rows = [qp.C[active]]
    bvals = [np.where(upp[active], qp.ub[active], qp.lb[active])]
    if ball_dir is not None:
        rows.append((ball_dir @ qp.C[qp.ball_start:qp.ball_start + qp.ball_len])[None, :])
        bvals.append(np.array([qp.ball_radius]))
    Ca = np.vstack(rows) if rows else np.zeros((0, d))
    b = np.concatenate(bvals)
    na = Ca.shape[0]
    if na == 0:
        try:
            z_new = np.linalg.solve(qp.H + settings.polish_reg * np.eye(d), -qp.g)
        except LinAlgError:
            return None
        return z_new, np.zeros(p)
    K = np.zeros((d + na, d + na))
    K[:d, :d] = qp.H + settings.polish_reg * np.eye(d)
    K[:d, d:] = Ca.T
    K[d:, :d] = Ca
    K[d:, d:] = -settings.polish_reg * np.eye(na)
    rhs = np.concatenate([-qp.g, b])
    try:
        sol = np.linalg.solve(K, rhs)
        # iterative refinement against the unregularized system
        K0 = K.copy()
        K0[:d, :d] = qp.H
        K0[d:, d:] = 0.0
        for _ in range(3):
            resid = rhs - K0 @ sol
            sol = sol + np.linalg.solve(K, resid)
    except LinAlgError:
        return None
    z_new = sol[:d]
    lam_new = np.zeros(p)
    lam_new[active] = sol[d:d + active.size]
    if ball_dir is not None:
        theta = sol[d + active.size]
        lam_new[qp.ball_start:qp.ball_start + qp.ball_len] = theta * ball_dir
    return z_new, lam_new


def _polish(qp, z, lam, settings):
    """Try dual-sign and slack-based active sets; return the better refinement."""
    eq = (qp.lb == qp.ub) & np.isfinite(qp.lb)
    ball = (qp.ball_start, qp.ball_len, qp.ball_radius)
    in_ball = np.zeros(qp.C.shape[0], dtype=bool)
    ball_dir = None
    if qp.ball_len > 0:
        in_ball[qp.ball_start:qp.ball_start + qp.ball_len] = True
        s_b = qp.C[in_ball] @ z
        nrm = float(np.linalg.norm(s_b))
        lam_b = float(np.linalg.norm(lam[in_ball]))
        if nrm >= qp.ball_radius * (1 - 1e-6) and nrm > 0.0 and lam_b > 1e-12:
            ball_dir = s_b / nrm
    lam_tol = 1e-10 * max(1.0, float(np.abs(lam).max(initial=0.0)))
    cands = []
    low = (lam < -lam_tol) & ~eq & np.isfinite(qp.lb) & ~in_ball
    upp = (lam > lam_tol) & ~eq & np.isfinite(qp.ub) & ~in_ball
    cands.append((low, upp))
    s = qp.C @ z
    act_tol = 1e-6 * max(1.0, float(np.abs(s).max(initial=0.0)))
    low_s = (s - qp.lb <= act_tol) & ~eq & np.isfinite(qp.lb) & ~in_ball
    upp_s = (qp.ub - s <= act_tol) & ~eq & np.isfinite(qp.ub) & ~in_ball
    if not (np.array_equal(low_s, low) and np.array_equal(upp_s, upp)):
        cands.append((low_s, upp_s))
    best = None
    best_kkt = np.inf
    for lo, up in cands:
        out = _polish_candidate(qp, lo, up, ball_dir, settings)
        if out is None:
            continue
        kkt = kkt_error(qp.H, qp.g, qp.C, qp.lb, qp.ub, out[0], out[1], ball)
        if kkt < best_kkt:
            best, best_kkt = out, kkt
    return best


class QpWorkspace:
    """Per-instance mutable solver state: warm-start carry and buffer reuse.

    One workspace per control loop; not shareable across threads.
    """

    def __init__(self):
        self.z = None
        self.y = None

    def reset(self):
        self.z = None
        self.y = None


def solve_qp(qp: DenseQp, warm_start=None, settings: Optional[QpSettings] = None,
             workspace: Optional[QpWorkspace] = None) -> QpSolution:
    """Solve a dense convex QP by over-relaxed operator splitting.

    ``warm_start`` may be a primal vector; a workspace additionally carries the
    previous dual.  Terminates on the spec tolerances (absolute + relative) or
    at ``max_iter``; primal infeasibility is certified from the dual update
    direction.  Deterministic for identical inputs and warm starts.
    """
    settings = settings or QpSettings()
    d = qp.g.shape[0]
    p = qp.C.shape[0]
    ball = (qp.ball_start, qp.ball_len, qp.ball_radius)

    Hs, gs, Cs, lbs, ubs, d_vec, e_vec, c = _ruiz_equilibrate(
        qp.H, qp.g, qp.C, qp.lb, qp.ub, settings.ruiz_iters,
        ball=(qp.ball_start, qp.ball_len))
    radius_s = qp.ball_radius * (e_vec[qp.ball_start] if qp.ball_len > 0 else 1.0)

    if p == 0:
        z = np.linalg.lstsq(qp.H, -qp.g, rcond=None)[0]
        kkt = kkt_error(qp.H, qp.g, qp.C, qp.lb, qp.ub, z, np.zeros(0))
        obj = 0.5 * z @ qp.H @ z + qp.g @ z
        return QpSolution(z=z, lam=np.zeros(0), status=OPTIMAL,
                          kkt_residual=kkt, iterations=0, objective=obj)

    eq_rows = (qp.lb == qp.ub) & np.isfinite(qp.lb)
    rho_vec = np.full(p, settings.rho)
    rho_vec[eq_rows] *= settings.eq_rho_scale

    # warm start (unscaled inputs)
    x_s = np.zeros(d)
    y_s = np.zeros(p)
    z0 = None
    if warm_start is not None:
        z0 = np.asarray(warm_start, float).ravel()
    elif workspace is not None and workspace.z is not None and workspace.z.shape[0] == d:
        z0 = workspace.z
    if z0 is not None:
        x_s = z0 / d_vec
    if workspace is not None and workspace.y is not None and workspace.y.shape[0] == p:
        y_s = c * workspace.y / e_vec
    z_s = Cs @ x_s

    L = _factor(Hs, Cs, rho_vec, settings.sigma)
    y_delta = np.zeros(p)
    iters_done = 0
    status = MAX_ITER
    rho_base = settings.rho
    last_adapt = 0
    eps_abs_loc = settings.eps_abs
    eps_rel_loc = settings.eps_rel
    best = None  # (z, lam, kkt) of the best converged round
    pinf_hits = 0
    y_prev_batch = np.empty(p)
    ball_s = (qp.ball_start, qp.ball_len, radius_s)

    while True:
        converged = False
        while iters_done < settings.max_iter:
            batch = min(settings.check_every, settings.max_iter - iters_done)
            y_prev_batch[:] = y_s
            _kernel.run_iters(L, Cs, gs, lbs, ubs, rho_vec, settings.sigma,
                              settings.alpha, x_s, z_s, y_s, batch, y_delta,
                              qp.ball_start, qp.ball_len, radius_s)
            iters_done += batch

            z_un = d_vec * x_s
            s_un = z_s / e_vec
            lam_un = e_vec * y_s / c
            Cz = qp.C @ z_un
            Hz = qp.H @ z_un
            Ct_lam = qp.C.T @ lam_un
            r_p = np.abs(Cz - s_un).max()
            r_d = np.abs(Hz + qp.g + Ct_lam).max()
            eps_p = eps_abs_loc + eps_rel_loc * max(np.abs(Cz).max(initial=0.0),
                                                    np.abs(s_un).max(initial=0.0))
            eps_d = eps_abs_loc + eps_rel_loc * max(
                np.abs(Hz).max(initial=0.0), np.abs(Ct_lam).max(initial=0.0),
                np.abs(qp.g).max(initial=0.0))
            if r_p <= eps_p and r_d <= eps_d:
                converged = True
                break

            # infeasibility certificate on the batch-aggregate dual direction,
            # in the scaled space; require two consecutive confirmations
            if _primal_infeasible(Cs, lbs, ubs, y_s - y_prev_batch,
                                  settings.eps_pinf, ball_s):
                pinf_hits += 1
                if pinf_hits >= 2:
                    status = INFEASIBLE
                    break
            else:
                pinf_hits = 0

            # deterministic periodic step-size adaptation
            if iters_done - last_adapt >= 625:
                last_adapt = iters_done
                denom_p = max(np.abs(Cz).max(initial=0.0), np.abs(s_un).max(initial=0.0), 1e-10)
                denom_d = max(np.abs(Hz).max(initial=0.0), np.abs(Ct_lam).max(initial=0.0),
                              np.abs(qp.g).max(initial=0.0), 1e-10)
                ratio = np.sqrt((r_p / denom_p) / max(r_d / denom_d, 1e-16))
                new_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
                if new_base > 5.0 * rho_base or new_base < rho_base / 5.0:
                    rho_base = new_base
                    rho_vec = np.full(p, rho_base)
                    rho_vec[eq_rows] *= settings.eq_rho_scale
                    L = _factor(Hs, Cs, rho_vec, settings.sigma)

        if status == INFEASIBLE:
            return QpSolution(z=d_vec * x_s, lam=e_vec * y_s / c, status=INFEASIBLE,
                              kkt_residual=np.inf, iterations=iters_done)
        if not converged:
            break

        status = OPTIMAL
        z_un = d_vec * x_s
        lam_un = e_vec * y_s / c
        kkt = kkt_error(qp.H, qp.g, qp.C, qp.lb, qp.ub, z_un, lam_un, ball)
        if settings.polish:
            polished = _polish(qp, z_un, lam_un, settings)
            if polished is not None:
                kkt_p = kkt_error(qp.H, qp.g, qp.C, qp.lb, qp.ub,
                                  polished[0], polished[1], ball)
                if kkt_p < kkt:
                    z_un, lam_un, kkt = polished[0], polished[1], kkt_p
        if best is None or kkt < best[2]:
            best = (z_un, lam_un, kkt)
        if best[2] <= settings.kkt_target or iters_done >= settings.max_iter:
            break
        # solution meets the termination tolerances but not the KKT target:
        # keep iterating at tighter tolerances and re-polish
        eps_abs_loc /= 100.0
        eps_rel_loc /= 100.0

    if best is None:
        return QpSolution(z=d_vec * x_s, lam=e_vec * y_s / c, status=MAX_ITER,
                          kkt_residual=np.inf, iterations=iters_done)

    z_un, lam_un, kkt = best
    if workspace is not None:
        workspace.z = z_un.copy()
        workspace.y = lam_un.copy()

    obj = 0.5 * z_un @ qp.H @ z_un + qp.g @ z_un
    return QpSolution(z=z_un, lam=lam_un, status=status, kkt_residual=kkt,
                      iterations=iters_done, objective=obj)


# ---------------------------------------------------------------------------
# SQP layer for receding-horizon programs
# ---------------------------------------------------------------------------

@dataclass
class SqpProblem:
    """Horizon program data plus a quadratic objective in the stacked variable.

    Variable layout: z = [u_0 .. u_{H-1}, x_1 .. x_H].  Stage bounds are the
    already-tightened boxes; ``band_*`` rows couple (u_i, x_i) at every stage
    (mixed constraints); the optional terminal ellipsoid x_H' P x_H <= alpha
    is enforced by sequential linearization.
    """

    model: object                    # NominalModel
    x0: np.ndarray
    horizon: int
    x_lb: np.ndarray                 # (H, n)
    x_ub: np.ndarray
    u_lb: np.ndarray                 # (H, m)
    u_ub: np.ndarray
    H_obj: np.ndarray                # (d, d)
    g_obj: np.ndarray                # (d,)
    band_a_u: Optional[np.ndarray] = None   # (nb, m)
    band_a_x: Optional[np.ndarray] = None   # (nb, n)
    band_lb: Optional[np.ndarray] = None    # (H, nb)
    band_ub: Optional[np.ndarray] = None    # (H, nb)
    terminal_P: Optional[np.ndarray] = None
    terminal_alpha: float = 0.0

    def terminal_sqrt(self):
        """Symmetric PSD square root of the terminal shape matrix (cached)."""
        if getattr(self, "_term_sqrt", None) is None:
            ev, V = np.linalg.eigh(np.asarray(self.terminal_P, float))
            self._term_sqrt = V @ np.diag(np.sqrt(np.maximum(ev, 0.0))) @ V.T
        return self._term_sqrt

    @property
    def dims(self):
        n = self.x0.shape[0]
        m = self.u_lb.shape[1]
        return self.horizon, n, m

    def split(self, z):
        H, n, m = self.dims
        u = z[: H * m].reshape(H, m)
        x = z[H * m:].reshape(H, n)
        return u, x

    def rollout(self, u_seq):
        """Dynamics-consistent stacked variable from an input sequence."""
        H, n, m = self.dims
        xs = np.empty((H, n))
        x = self.x0
        for i in range(H):
            x = self.model.step(x, u_seq[i])
            xs[i] = x
        return np.concatenate([np.asarray(u_seq, float).ravel(), xs.ravel()])


@dataclass
class SqpSettings:
    max_outer: int = 50
    step_tol: float = 1e-7
    cviol_tol: float = 1e-7
    trust_radius: float = 10.0
    qp: QpSettings = field(default_factory=QpSettings)


def _build_subproblem(prob: SqpProblem, z_lin, trust):
    """Linearize dynamics at z_lin and assemble the dense QP rows.

    The terminal ellipsoid x_H' P x_H <= alpha enters exactly as a ball block
    ||P^{1/2} x_H||_2 <= sqrt(alpha) handled by the solver's projection step,
    so only the dynamics need relinearization.
    """
    H, n, m = prob.dims
    nu = H * m
    d = nu + H * n
    u_hat, x_hat = prob.split(z_lin)
    nb = prob.band_a_u.shape[0] if prob.band_a_u is not None else 0
    has_term = prob.terminal_P is not None
    p = H * n + H * n + H * m + H * nb + (n if has_term else 0)
    C = np.zeros((p, d))
    lb = np.empty(p)
    ub = np.empty(p)

    def u_idx(i):
        return slice(i * m, (i + 1) * m)

    def x_idx(i):  # state x_{i+1} lives at block i
        return slice(nu + i * n, nu + (i + 1) * n)

    row = 0
    # dynamics equalities
    x_prev = prob.x0
    for i in range(H):
        A_i, B_i = prob.model.jacobians(x_prev, u_hat[i])
        f_i = prob.model.step(x_prev, u_hat[i])
        rows = slice(row, row + n)
        C[rows, u_idx(i)] = B_i
        if i > 0:
            C[rows, x_idx(i - 1)] = A_i
            rhs = -(f_i - A_i @ x_hat[i - 1] - B_i @ u_hat[i])
        else:
            rhs = -(f_i - B_i @ u_hat[i])
        C[rows, x_idx(i)] = -np.eye(n)
        lb[rows] = rhs
        ub[rows] = rhs
        row += n
        x_prev = x_hat[i]
    # state boxes (with trust region for the nonlinear case)
    for i in range(H):
        rows = slice(row, row + n)
        C[rows, x_idx(i)] = np.eye(n)
        lo = prob.x_lb[i]
        hi = prob.x_ub[i]
        if trust is not None:
            lo = np.maximum(lo, x_hat[i] - trust)
            hi = np.minimum(hi, x_hat[i] + trust)
        lb[rows] = np.minimum(lo, hi)
        ub[rows] = np.maximum(lo, hi)
        row += n
    # input boxes
    for i in range(H):
        rows = slice(row, row + m)
        C[rows, u_idx(i)] = np.eye(m)
        lo = prob.u_lb[i]
        hi = prob.u_ub[i]
        if trust is not None:
            lo = np.maximum(lo, u_hat[i] - trust)
            hi = np.minimum(hi, u_hat[i] + trust)
        lb[rows] = np.minimum(lo, hi)
        ub[rows] = np.maximum(lo, hi)
        row += m
    # mixed band rows a_u u_i + a_x x_i in [lo, hi]
    for i in range(H):
        if nb == 0:
            break
        rows = slice(row, row + nb)
        C[rows, u_idx(i)] = prob.band_a_u
        if i > 0:
            C[rows, x_idx(i - 1)] = prob.band_a_x
            lb[rows] = prob.band_lb[i]
            ub[rows] = prob.band_ub[i]
        else:
            shift = prob.band_a_x @ prob.x0
            lb[rows] = prob.band_lb[i] - shift
            ub[rows] = prob.band_ub[i] - shift
        row += nb
    # terminal ellipsoid as a Euclidean ball block on P^{1/2} x_H
    ball_start, ball_len, ball_radius = -1, 0, 0.0
    if has_term:
        ball_start, ball_len = row, n
        ball_radius = float(np.sqrt(max(prob.terminal_alpha, 0.0)))
        C[row:row + n, x_idx(H - 1)] = prob.terminal_sqrt()
        lb[row:row + n] = -_INF
        ub[row:row + n] = _INF
        row += n
    return DenseQp(H=prob.H_obj, g=prob.g_obj, C=C, lb=lb, ub=ub,
                   ball_start=ball_start, ball_len=ball_len,
                   ball_radius=ball_radius)


def constraint_violation(prob: SqpProblem, z):
    """True (nonlinear) constraint violation of a stacked iterate."""
    H, n, m = prob.dims
    u, x = prob.split(z)
    v = 0.0
    x_prev = prob.x0
    for i in range(H):
        v = max(v, float(np.abs(prob.model.step(x_prev, u[i]) - x[i]).max()))
        x_prev = x[i]
    v = max(v, float(np.maximum(0.0, prob.x_lb - x).max(initial=0.0)))
    v = max(v, float(np.maximum(0.0, x - prob.x_ub).max(initial=0.0)))
    v = max(v, float(np.maximum(0.0, prob.u_lb - u).max(initial=0.0)))
    v = max(v, float(np.maximum(0.0, u - prob.u_ub).max(initial=0.0)))
    if prob.band_a_u is not None:
        for i in range(H):
            xi = prob.x0 if i == 0 else x[i - 1]
            val = prob.band_a_u @ u[i] + prob.band_a_x @ xi
            v = max(v, float(np.maximum(0.0, prob.band_lb[i] - val).max(initial=0.0)))
            v = max(v, float(np.maximum(0.0, val - prob.band_ub[i]).max(initial=0.0)))
    if prob.terminal_P is not None:
        v = max(v, max(0.0, float(x[H - 1] @ prob.terminal_P @ x[H - 1]
                                  - prob.terminal_alpha)))
    return v


def solve_sqp(prob: SqpProblem, z0, settings: Optional[SqpSettings] = None,
              workspace: Optional[QpWorkspace] = None) -> QpSolution:
    """Sequential linearization of the horizon program.

    The objective is exactly quadratic, so subproblems use it unmodified
    (Gauss-Newton structure); dynamics and the terminal ellipsoid are
    linearized at the incumbent.  Steps are accepted on decrease of the merit
    function objective + mu * (l1 constraint violation); the trust radius
    shrinks on rejection.  Linear models converge in one iteration.
    """
    settings = settings or SqpSettings()
    z = np.asarray(z0, float).copy()
    linear = bool(getattr(prob.model, "linear", False))
    trust = None if linear else settings.trust_radius
    mu = 1.0
    obj = lambda v: 0.5 * v @ prob.H_obj @ v + prob.g_obj @ v
    last_sol = None
    total_inner = 0

    for outer in range(1, settings.max_outer + 1):
        qp = _build_subproblem(prob, z, trust)
        sol = solve_qp(qp, warm_start=z, settings=settings.qp, workspace=workspace)
        total_inner += sol.iterations
        if sol.status == INFEASIBLE:
            if last_sol is None:
                return QpSolution(z=z, lam=np.zeros(qp.C.shape[0]), status=INFEASIBLE,
                                  kkt_residual=np.inf, iterations=total_inner,
                                  outer_iterations=outer)
            # trust region may be cutting the feasible set for nonlinear steps
            if trust is not None and trust > 1e-3:
                trust *= 0.25
                continue
            last_sol.status = MAX_ITER
            last_sol.outer_iterations = outer
            return last_sol
        z_new = sol.z
        step = float(np.abs(z_new - z).max())
        v_new = constraint_violation(prob, z_new)

        if linear:
            # linearization exact except the terminal cut; recut until satisfied
            z = z_new
            last_sol = sol
            if v_new <= settings.cviol_tol:
                sol.kkt_residual = max(sol.kkt_residual, v_new)
                sol.iterations = total_inner
                sol.outer_iterations = outer
                return sol
            continue

        mu = max(mu, 2.0 * float(np.abs(sol.lam).max(initial=0.0)) + 1.0)
        phi_old = obj(z) + mu * constraint_violation(prob, z)
        phi_new = obj(z_new) + mu * v_new
        if phi_new <= phi_old + 1e-12:
            accepted_step = step
            z = z_new
            last_sol = sol
            if trust is not None:
                trust = min(trust * 2.0, settings.trust_radius)
            if accepted_step <= settings.step_tol and v_new <= settings.cviol_tol:
                sol.kkt_residual = max(sol.kkt_residual, v_new)
                sol.iterations = total_inner
                sol.outer_iterations = outer
                return sol
        else:
            if trust is None or trust <= 1e-9:
                break
            trust *= 0.25

    # merit stagnation or iteration budget exhausted
    if last_sol is not None and constraint_violation(prob, last_sol.z) <= settings.cviol_tol:
        last_sol.status = OPTIMAL
        last_sol.iterations = total_inner
        last_sol.outer_iterations = settings.max_outer
        return last_sol
    status = MAX_ITER
    result = last_sol or QpSolution(z=z, lam=np.zeros(0), status=status,
                                    kkt_residual=np.inf)
    result.status = status
    result.iterations = total_inner
    result.outer_iterations = settings.max_outer
    return result
