"""Slow-loop dc bus voltage controller.

The quasi-steady ac side turns the bus into a scalar nonlinear system in
v_dc driven by the dq current references; an integrator state on the
voltage error is appended for offset-free tracking.  The receding-horizon
problem discretizes this model with forward Euler and keeps both states
and inputs as decision variables (full transcription).  It is solved by
SQP: the QP subproblems use the exact (diagonal, positive-definite)
Hessian of the quadratic objective, linearized dynamics as equalities,
linearized current-circle / voltage-ellipse rows as inequalities handled
by an elementary active-set method, and a quadratic penalty on the bus
voltage box.  Warm starts shift the previous solution one stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveVoltage
from .machine import DcLinkParams, MachineParams

# Quadratic penalty weight on the v_dc box (per V^2 of violation); strong
# next to q_weight[0] but finite so transient infeasibility degrades softly.
BOX_PENALTY = 1.0e3

# Rollouts and line-search trials must keep the predicted bus voltage away
# from the 1/v singularity.
V_GUARD = 5.0


@dataclass(frozen=True)
class ReducedState:
    """Bus voltage plus tracking-error integral."""

    v_dc: float  # V
    e_int: float  # V s

    def __post_init__(self):
        if not self.v_dc > 0.0:
            raise ValueError("ReducedState.v_dc must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_dc, self.e_int])


@dataclass(frozen=True)
class NmpcConfig:
    horizon_n: int = 10
    t_s: float = 0.5e-3  # s
    q_weight: tuple[float, float] = (0.1, 9000.0)  # diag on (v_dc, e_int)
    r_weight: tuple[float, float] = (0.1, 0.1)  # diag on (i_d, i_q)
    v_dc_min: float = 420.0
    v_dc_max: float = 670.0
    i_peak: float = 400.0
    v_dc_ref: float = 540.0
    max_sqp_iters: int = 50
    kkt_tol: float = 1e-6

    def __post_init__(self):
        if self.horizon_n < 1:
            raise ValueError("horizon_n must be >= 1")
        if not self.t_s > 0.0:
            raise ValueError("t_s must be > 0")
        if min(self.q_weight) < 0.0 or min(self.r_weight) <= 0.0:
            raise ValueError("q_weight must be PSD and r_weight PD on the diagonal")
        if not 0.0 < self.v_dc_min < self.v_dc_ref < self.v_dc_max:
            raise ValueError("require v_dc_min < v_dc_ref < v_dc_max")


@dataclass
class OcpSolution:
    u_sequence: np.ndarray  # (N, 2) current references
    x_sequence: np.ndarray  # (N+1, 2) predicted states incl. the measured x0
    cost: float
    kkt_residual: float
    iterations: int
    converged: bool
    slack_used: bool = False
    active_circle: np.ndarray | None = None  # (N,) bool
    active_ellipse: np.ndarray | None = None
    working_set: list[int] = field(default_factory=list)


def reduced_dynamics(
    x: ReducedState,
    u: tuple[float, float],
    i_load: float,
    omega_r: float,
    mp: MachineParams,
    dp: DcLinkParams,
    v_floor: float = 1.0,
) -> np.ndarray:
    """(v_dc', e_int') of the reduced model with the currents as inputs."""
    v = x.v_dc
    if v <= v_floor:
        raise NonPositiveVoltage(f"v_dc = {v:.3f} V <= floor {v_floor:.3f} V")
    i_d, i_q = u
    w = omega_r
    psi = (
        -mp.r_s * (i_d * i_d + i_q * i_q)
        + w * (mp.l_q - mp.l_d) * i_q * i_d
        - w * mp.lambda_m * i_q
    )
    dv = -v / (dp.r * dp.c) - i_load / dp.c + 1.5 * psi / (dp.c * v)
    de = dp.v_dc_ref - v
    return np.array([dv, de])


def discretize_fe(
    x: ReducedState,
    u: tuple[float, float],
    i_load: float,
    omega_r: float,
    t_s: float,
    mp: MachineParams,
    dp: DcLinkParams,
) -> ReducedState:
    """One forward-Euler step of the reduced model."""
    if t_s < 0.0:
        raise ValueError("t_s must be >= 0")
    dx = reduced_dynamics(x, u, i_load, omega_r, mp, dp) if t_s > 0.0 else np.zeros(2)
    return ReducedState(v_dc=x.v_dc + t_s * dx[0], e_int=x.e_int + t_s * dx[1])


class _Transcription:
    """Dense assembly of the horizon-N problem in z = [u_0..u_{N-1}, x_1..x_N]."""

    def __init__(self, x0, i_load, omega_r, cfg, mp, dp):
        self.x0 = np.asarray(x0, dtype=float)
        self.i_load = float(i_load)
        self.w = float(omega_r)
        self.cfg = cfg
        self.mp = mp
        self.dp = dp
        self.n = cfg.horizon_n
        self.nz = 4 * self.n
        self.x_ref = np.array([cfg.v_dc_ref, 0.0])
        self.ipk2 = cfg.i_peak**2
        # diagonal objective Hessian: 2R per input block, 2Q per state block
        h = np.empty(self.nz)
        h[: 2 * self.n] = np.tile([2.0 * cfg.r_weight[0], 2.0 * cfg.r_weight[1]], self.n)
        h[2 * self.n :] = np.tile([2.0 * cfg.q_weight[0], 2.0 * cfg.q_weight[1]], self.n)
        self.h_diag = h

    def split(self, z):
        n = self.n
        return z[: 2 * n].reshape(n, 2), z[2 * n :].reshape(n, 2)

    def join(self, u_seq, x_seq):
        return np.concatenate([np.asarray(u_seq).ravel(), np.asarray(x_seq).ravel()])

    def _f(self, v, u):
        mp, dp = self.mp, self.dp
        psi = (
            -mp.r_s * (u[0] * u[0] + u[1] * u[1])
            + self.w * (mp.l_q - mp.l_d) * u[1] * u[0]
            - self.w * mp.lambda_m * u[1]
        )
        dv = -v / (dp.r * dp.c) - self.i_load / dp.c + 1.5 * psi / (dp.c * v)
        return np.array([dv, dp.v_dc_ref - v])

    def rollout(self, u_seq):
        """Dynamics-consistent states for an input sequence.

        Returns (x, ok); ok is False when the predicted voltage had to be
        clamped at the guard, i.e. the inputs drive the model into the 1/v
        singularity.
        """
        x = np.empty((self.n, 2))
        cur = self.x0.copy()
        ok = True
        for k in range(self.n):
            cur = cur + self.cfg.t_s * self._f(max(cur[0], V_GUARD), u_seq[k])
            if cur[0] < V_GUARD:
                cur[0] = V_GUARD
                ok = False
            x[k] = cur
        return x, ok

    def objective(self, z):
        u, x = self.split(z)
        cfg = self.cfg
        dx = x - self.x_ref
        j = (
            cfg.r_weight[0] * np.sum(u[:, 0] ** 2)
            + cfg.r_weight[1] * np.sum(u[:, 1] ** 2)
            + cfg.q_weight[0] * np.sum(dx[:, 0] ** 2)
            + cfg.q_weight[1] * np.sum(dx[:, 1] ** 2)
        )
        over = np.maximum(x[:, 0] - cfg.v_dc_max, 0.0)
        under = np.maximum(cfg.v_dc_min - x[:, 0], 0.0)
        return j + BOX_PENALTY * float(np.sum(over**2 + under**2))

    def gradient(self, z):
        u, x = self.split(z)
        cfg = self.cfg
        g = np.empty(self.nz)
        g[: 2 * self.n] = (2.0 * u * np.array(cfg.r_weight)).ravel()
        gx = 2.0 * (x - self.x_ref) * np.array(cfg.q_weight)
        over = np.maximum(x[:, 0] - cfg.v_dc_max, 0.0)
        under = np.maximum(cfg.v_dc_min - x[:, 0], 0.0)
        gx[:, 0] += 2.0 * BOX_PENALTY * (over - under)
        g[2 * self.n :] = gx.ravel()
        return g

    def qp_hessian(self, z):
        _, x = self.split(z)
        cfg = self.cfg
        h = self.h_diag.copy()
        viol = (x[:, 0] > cfg.v_dc_max) | (x[:, 0] < cfg.v_dc_min)
        hx = h[2 * self.n :].reshape(self.n, 2)
        hx[viol, 0] += 2.0 * BOX_PENALTY
        return h

    def lagrangian_hessian(self, z, lam, mu):
        """Dense Hessian of the Lagrangian, floored to stay positive definite.

        Constraint curvature matters here: without it the SQP crawls at a
        slow linear rate because the dynamics are strongly bilinear in the
        current inputs.
        """
        u, x = self.split(z)
        n = self.n
        mp, dp, w, ts = self.mp, self.dp, self.w, self.cfg.t_s
        h = np.diag(self.qp_hessian(z))
        vpk_scale = (0.5 * self.cfg.v_dc_ref) ** 2
        wd = w * (mp.l_q - mp.l_d)
        for k in range(n):
            xk = self.x0 if k == 0 else x[k - 1]
            v = xk[0]
            uk = u[k]
            l1 = lam[2 * k]
            iu = 2 * k
            # equality row: -ts*l1 * d2f1
            s = 1.5 / (dp.c * v)
            d2_u = np.array([[-2.0 * mp.r_s * s, wd * s], [wd * s, -2.0 * mp.r_s * s]])
            h[iu : iu + 2, iu : iu + 2] += -ts * l1 * d2_u
            if k > 0:
                ix = 2 * n + 2 * (k - 1)
                psi = -mp.r_s * (uk[0] ** 2 + uk[1] ** 2) + wd * uk[1] * uk[0] - w * mp.lambda_m * uk[1]
                dvdu0 = -1.5 * (-2.0 * mp.r_s * uk[0] + wd * uk[1]) / (dp.c * v * v)
                dvdu1 = -1.5 * (-2.0 * mp.r_s * uk[1] + wd * uk[0] - w * mp.lambda_m) / (dp.c * v * v)
                dvdv = 3.0 * psi / (dp.c * v**3)
                h[iu, ix] += -ts * l1 * dvdu0
                h[ix, iu] += -ts * l1 * dvdu0
                h[iu + 1, ix] += -ts * l1 * dvdu1
                h[ix, iu + 1] += -ts * l1 * dvdu1
                h[ix, ix] += -ts * l1 * dvdv
            # circle row (normalized)
            mc = mu[2 * k]
            if mc > 0.0:
                h[iu, iu] += mc * 2.0 / self.ipk2
                h[iu + 1, iu + 1] += mc * 2.0 / self.ipk2
            # ellipse row (normalized)
            me_ = mu[2 * k + 1]
            if me_ > 0.0:
                h[iu, iu] += me_ * 2.0 * (w * mp.l_d) ** 2 / vpk_scale
                h[iu + 1, iu + 1] += me_ * 2.0 * (w * mp.l_q) ** 2 / vpk_scale
                if k > 0:
                    ix = 2 * n + 2 * (k - 1)
                    h[ix, ix] += -me_ * 0.5 / vpk_scale
        # keep the subproblem strictly convex
        floor = 0.05 * float(np.min(self.h_diag))
        evals = np.linalg.eigvalsh(h)
        if evals[0] < floor:
            h += (floor - evals[0]) * np.eye(self.nz)
        return h

    def constraints(self, z):
        """Equality residuals c (2N,), inequality values g (2N,), and Jacobians."""
        u, x = self.split(z)
        n, nz = self.n, self.nz
        mp, dp, cfg, w = self.mp, self.dp, self.cfg, self.w
        ts = cfg.t_s
        c = np.empty(2 * n)
        a_eq = np.zeros((2 * n, nz))
        g = np.empty(2 * n)
        a_in = np.zeros((2 * n, nz))

        vpk_scale = (0.5 * cfg.v_dc_ref) ** 2  # normalization for ellipse rows
        for k in range(n):
            xk = self.x0 if k == 0 else x[k - 1]
            xk1 = x[k]
            uk = u[k]
            v = xk[0]
            psi = (
                -mp.r_s * (uk[0] ** 2 + uk[1] ** 2)
                + w * (mp.l_q - mp.l_d) * uk[1] * uk[0]
                - w * mp.lambda_m * uk[1]
            )
            f1 = -v / (dp.r * dp.c) - self.i_load / dp.c + 1.5 * psi / (dp.c * v)
            f2 = dp.v_dc_ref - v
            c[2 * k] = xk1[0] - v - ts * f1
            c[2 * k + 1] = xk1[1] - xk[1] - ts * f2

            df1_dv = -1.0 / (dp.r * dp.c) - 1.5 * psi / (dp.c * v * v)
            df1_du0 = 1.5 * (-2.0 * mp.r_s * uk[0] + w * (mp.l_q - mp.l_d) * uk[1]) / (dp.c * v)
            df1_du1 = (
                1.5
                * (-2.0 * mp.r_s * uk[1] + w * (mp.l_q - mp.l_d) * uk[0] - w * mp.lambda_m)
                / (dp.c * v)
            )
            iu = 2 * k
            ix1 = 2 * n + 2 * k
            a_eq[2 * k, iu] = -ts * df1_du0
            a_eq[2 * k, iu + 1] = -ts * df1_du1
            a_eq[2 * k, ix1] = 1.0
            a_eq[2 * k + 1, ix1 + 1] = 1.0
            if k > 0:
                ix0 = 2 * n + 2 * (k - 1)
                a_eq[2 * k, ix0] = -1.0 - ts * df1_dv
                a_eq[2 * k + 1, ix0] = ts  # -(-1)*ts from f2 = vref - v
                a_eq[2 * k + 1, ix0 + 1] = -1.0

            # current circle, normalized by I_peak^2
            g[2 * k] = (uk[0] ** 2 + uk[1] ** 2 - self.ipk2) / self.ipk2
            a_in[2 * k, iu] = 2.0 * uk[0] / self.ipk2
            a_in[2 * k, iu + 1] = 2.0 * uk[1] / self.ipk2

            # voltage ellipse with state-dependent radius (x_{1,k}/2)^2
            eq_term = w * mp.l_d * uk[0] + w * mp.lambda_m
            ell = (w * mp.l_q * uk[1]) ** 2 + eq_term**2 - (0.5 * v) ** 2
            g[2 * k + 1] = ell / vpk_scale
            a_in[2 * k + 1, iu] = 2.0 * w * mp.l_d * eq_term / vpk_scale
            a_in[2 * k + 1, iu + 1] = 2.0 * (w * mp.l_q) ** 2 * uk[1] / vpk_scale
            if k > 0:
                a_in[2 * k + 1, 2 * n + 2 * (k - 1)] = -0.5 * v / vpk_scale
        return c, a_eq, g, a_in


def _active_set_qp(h, grad, a_eq, b_eq, a_in, b_in, w0=None, max_iter=120, tol=1e-9):
    """min 0.5 d'Hd + g'd  s.t.  A_eq d = b_eq, A_in d <= b_in  (H PD).

    Elementary working-set iteration on the KKT system: drop the most
    negative multiplier, else add the most violated row.  Returns
    (d, lambda_eq, mu_in, ok, working_set).
    """
    h = np.diag(h) if np.ndim(h) == 1 else h
    n = grad.size
    me = a_eq.shape[0]
    mi = a_in.shape[0]
    work: list[int] = sorted(set(i for i in (w0 or []) if 0 <= i < mi))
    d = np.zeros(n)
    lam = np.zeros(me)
    mu = np.zeros(mi)
    for _ in range(max_iter):
        rows = np.vstack([a_eq, a_in[work]]) if work else a_eq
        rhs_c = np.concatenate([b_eq, b_in[work]]) if work else b_eq
        m = rows.shape[0]
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = h
        kkt[:n, n:] = rows.T
        kkt[n:, :n] = rows
        rhs = np.concatenate([-grad, rhs_c])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        d = sol[:n]
        lam = sol[n : n + me]
        mu_w = sol[n + me :]

        if work and mu_w.size and mu_w.min() < -tol:
            work.pop(int(np.argmin(mu_w)))
            continue
        mu = np.zeros(mi)
        if work:
            mu[work] = np.maximum(mu_w, 0.0)
        if mi == 0:
            return d, lam, mu, True, work
        viol = a_in @ d - b_in
        if work:
            viol[work] = -np.inf
        j = int(np.argmax(viol))
        if viol[j] <= tol:
            return d, lam, mu, True, work
        work.append(j)
        work.sort()
    return d, lam, mu, False, work


def _relaxed_qp(h0, grad, a_eq, b_eq, a_in, b_in, sigma=1e6, iters=8):
    """Penalty fallback when the active-set loop stalls: inequalities become
    iterated quadratic penalties, equalities stay hard."""
    h0 = np.diag(h0) if np.ndim(h0) == 1 else h0
    n = grad.size
    me = a_eq.shape[0]
    d = np.zeros(n)
    for _ in range(iters):
        viol_idx = np.flatnonzero(a_in @ d - b_in > 0.0)
        h = h0.copy()
        g = grad.copy()
        if viol_idx.size:
            av = a_in[viol_idx]
            h += 2.0 * sigma * av.T @ av
            g += 2.0 * sigma * av.T @ (-b_in[viol_idx])
        kkt = np.zeros((n + me, n + me))
        kkt[:n, :n] = h
        kkt[:n, n:] = a_eq.T
        kkt[n:, :n] = a_eq
        rhs = np.concatenate([-g, b_eq])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        d_new = sol[:n]
        if np.max(np.abs(d_new - d)) < 1e-12:
            d = d_new
            break
        d = d_new
    lam = sol[n:]
    mu = 2.0 * sigma * np.maximum(a_in @ d - b_in, 0.0)
    return d, lam, mu


def _merit_on_manifold(tr: _Transcription, z, nu):
    """Objective plus weighted inequality violation; z must satisfy the
    rolled-out dynamics so no equality term is needed."""
    _, _, g, _ = tr.constraints(z)
    return tr.objective(z) + nu * float(np.sum(np.maximum(g, 0.0)))


def build_and_solve_ocp(
    x0: ReducedState,
    i_load_forecast: float,
    omega_r: float,
    cfg: NmpcConfig,
    mp: MachineParams,
    dp: DcLinkParams,
    warm_start: OcpSolution | None = None,
) -> OcpSolution:
    """Solve the horizon problem from the measured state.

    The load current is held constant over the horizon.  Non-convergence
    returns the best iterate with ``converged=False``; a stalled QP falls
    back to a penalty-relaxed subproblem and sets ``slack_used``.
    """
    tr = _Transcription(x0.as_array(), i_load_forecast, omega_r, cfg, mp, dp)
    n = tr.n

    if warm_start is not None and warm_start.u_sequence.shape == (n, 2):
        u_seq = warm_start.u_sequence.copy()
        work = list(warm_start.working_set)
    else:
        # load-balance heuristic on the magnet axis only
        p_hat = x0.v_dc**2 / dp.r + x0.v_dc * i_load_forecast
        i_q0 = -p_hat / (1.5 * omega_r * mp.lambda_m)
        i_q0 = min(0.95 * cfg.i_peak, max(-0.95 * cfg.i_peak, i_q0))
        u_seq = np.tile([0.0, i_q0], (n, 1))
        work = []

    # iterate on the dynamics manifold: states are always the exact rollout
    # of the inputs, so the merit function carries no equality term and the
    # full Newton step is normally accepted
    x_seq, _ = tr.rollout(u_seq)
    z = tr.join(u_seq, x_seq)

    nu = 1.0
    slack_used = False
    kkt_res = np.inf
    it = 0
    lam = np.zeros(2 * n)
    mu = np.zeros(2 * n)
    u_cap = 200.0  # A per SQP iteration

    for it in range(1, cfg.max_sqp_iters + 1):
        c, a_eq, g, a_in = tr.constraints(z)
        grad = tr.gradient(z)
        h = tr.lagrangian_hessian(z, lam, mu)

        d, lam, mu, qp_ok, work = _active_set_qp(h, grad, a_eq, -c, a_in, -g, w0=work)
        if not qp_ok:
            d, lam, mu = _relaxed_qp(h, grad, a_eq, -c, a_in, -g)
            slack_used = True

        stat = np.max(np.abs(grad + a_eq.T @ lam + a_in.T @ mu)) / max(1.0, np.max(np.abs(grad)))
        feas = max(np.max(np.abs(c)) / (1.0 + cfg.v_dc_ref), float(np.max(np.maximum(g, 0.0), initial=0.0)))
        comp = float(np.max(np.abs(mu * g), initial=0.0))
        kkt_res = max(stat, feas, comp)
        if kkt_res <= cfg.kkt_tol:
            return _finish(tr, z, kkt_res, it, True, slack_used, work)

        d_u = d[: 2 * n].reshape(n, 2)
        scale = np.max(np.abs(d_u)) / u_cap
        if scale > 1.0:
            d_u = d_u / scale
            d = d / scale
        nu = max(nu, 2.0 * np.max(mu, initial=0.0) + 1.0)
        u_cur, _ = tr.split(z)
        phi0 = _merit_on_manifold(tr, z, nu)
        # exact-penalty directional derivative (violated rows get corrected
        # in full by the QP)
        dphi = float(grad @ d) - nu * float(np.sum(np.maximum(g, 0.0)))
        alpha = 1.0
        accepted = False
        for _ in range(30):
            u_try = u_cur + alpha * d_u
            x_try, roll_ok = tr.rollout(u_try)
            if roll_ok:
                z_try = tr.join(u_try, x_try)
                phi = _merit_on_manifold(tr, z_try, nu)
                target = phi0 + 1e-4 * alpha * dphi if dphi < 0.0 else phi0
                if math.isfinite(phi) and phi <= target:
                    z = z_try
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            # no merit progress; report the iterate we have
            return _finish(tr, z, kkt_res, it, False, slack_used, work)

    return _finish(tr, z, kkt_res, it, False, slack_used, work)


def _finish(tr, z, kkt_res, iters, converged, slack_used, work):
    u, x = tr.split(z)
    _, _, g, _ = tr.constraints(z)
    act_tol = 1e-6
    active_circle = g[0::2] > -act_tol
    active_ellipse = g[1::2] > -act_tol
    return OcpSolution(
        u_sequence=u.copy(),
        x_sequence=np.vstack([tr.x0, x]),
        cost=tr.objective(z),
        kkt_residual=float(kkt_res),
        iterations=iters,
        converged=converged,
        slack_used=slack_used,
        active_circle=active_circle,
        active_ellipse=active_ellipse,
        working_set=list(work),
    )


@dataclass
class ControllerMemory:
    """Warm-start and integrator state owned by one controller instance."""

    e_int: float = 0.0
    solution: OcpSolution | None = None
    last_refs: tuple[float, float] | None = None
    held: bool = False


# accept an unconverged iterate as long as it is not wildly off; beyond this
# the previous reference is held instead
ACCEPT_KKT = 1e-2


def nmpc_step(
    measured: ReducedState,
    i_load_estimate: float,
    omega_r: float,
    cfg: NmpcConfig,
    memory: ControllerMemory,
    mp: MachineParams,
    dp: DcLinkParams,
) -> tuple[tuple[float, float], dict]:
    """One receding-horizon update. Returns the current references and diagnostics.

    The previous solution is stored as the next warm start, the first input
    is projected exactly onto the current circle, and the internal
    voltage-error integrator advances by t_s*(v_ref - v_dc).

    The warm start reuses the previous input sequence unshifted: the optimal
    plan is strongly non-uniform over the horizon (input cost shedding near
    the end), so at a receding-horizon fixed point the unshifted sequence is
    already optimal while its shift is several amps off.
    """
    warm = memory.solution

    sol = build_and_solve_ocp(measured, i_load_estimate, omega_r, cfg, mp, dp, warm_start=warm)

    held = False
    if (sol.converged or sol.kkt_residual <= ACCEPT_KKT) or memory.last_refs is None:
        u0 = sol.u_sequence[0].copy()
        norm = math.hypot(u0[0], u0[1])
        if norm > cfg.i_peak:
            u0 *= cfg.i_peak / norm
        refs = (float(u0[0]), float(u0[1]))
    else:
        refs = memory.last_refs
        held = True

    memory.solution = sol
    memory.last_refs = refs
    memory.held = held
    memory.e_int = measured.e_int + cfg.t_s * (cfg.v_dc_ref - measured.v_dc)

    diag = {
        "iterations": sol.iterations,
        "kkt_residual": sol.kkt_residual,
        "converged": sol.converged,
        "slack_used": sol.slack_used,
        "held": held,
        "active_circle": bool(sol.active_circle[0]) if sol.active_circle is not None else False,
        "active_ellipse": bool(sol.active_ellipse[0]) if sol.active_ellipse is not None else False,
    }
    return refs, diag


class NmpcController:
    """Convenience wrapper owning config, machine constants and memory."""

    def __init__(self, cfg: NmpcConfig, mp: MachineParams, dp: DcLinkParams):
        self.cfg = cfg
        self.mp = mp
        self.dp = dp
        self.memory = ControllerMemory()

    def step(self, v_dc: float, i_load_estimate: float, omega_r: float):
        measured = ReducedState(v_dc=v_dc, e_int=self.memory.e_int)
        return nmpc_step(measured, i_load_estimate, omega_r, self.cfg, self.memory, self.mp, self.dp)

    def reset(self):
        self.memory = ControllerMemory()


def run_reduced_loop(
    controller: NmpcController,
    p_load: float,
    omega_r: float,
    duration: float,
    v0: float | None = None,
    substeps: int = 10,
) -> dict[str, np.ndarray]:
    """Closed loop of the controller against its own reduced plant model.

    Used to pre-settle the integrator/warm start before a full simulation
    and to check steady-state behaviour at constant load.  The plant side
    integrates the reduced model with RK4 at t_s/substeps; the load is a
    constant-power sink p_load/v.
    """
    cfg, mp, dp = controller.cfg, controller.mp, controller.dp
    v = cfg.v_dc_ref if v0 is None else v0
    n = int(round(duration / cfg.t_s))
    dt = cfg.t_s / substeps
    t_hist = np.empty(n)
    v_hist = np.empty(n)
    u_hist = np.empty((n, 2))

    def dv_dt(vv, u, i_load):
        psi = (
            -mp.r_s * (u[0] ** 2 + u[1] ** 2)
            + omega_r * (mp.l_q - mp.l_d) * u[1] * u[0]
            - omega_r * mp.lambda_m * u[1]
        )
        return -vv / (dp.r * dp.c) - i_load / dp.c + 1.5 * psi / (dp.c * vv)

    for k in range(n):
        refs, _ = controller.step(v, p_load / v, omega_r)
        for _ in range(substeps):
            k1 = dv_dt(v, refs, p_load / v)
            v2 = v + 0.5 * dt * k1
            k2 = dv_dt(v2, refs, p_load / v2)
            v3 = v + 0.5 * dt * k2
            k3 = dv_dt(v3, refs, p_load / v3)
            v4 = v + dt * k3
            k4 = dv_dt(v4, refs, p_load / v4)
            v += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t_hist[k] = (k + 1) * cfg.t_s
        v_hist[k] = v
        u_hist[k] = refs
    return {"t": t_hist, "v_dc": v_hist, "u": u_hist}
