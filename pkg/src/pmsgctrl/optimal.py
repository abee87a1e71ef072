"""Minimum-norm dq currents for a prescribed electrical power.

Solves

    min  i_d^2 + i_q^2
    s.t. 1.5*omega_r*(lambda_m*i_q + (L_d - L_q)*i_q*i_d) = P_e
         i_d^2 + i_q^2 <= I_peak^2
         (omega_r*L_q*i_q)^2 + (omega_r*L_d*i_d + omega_r*lambda_m)^2 <= (v_dc/2)^2

The power equality is affine in i_q for fixed i_d, so the problem reduces
to one dimension: scan i_d, solve i_q in closed form, minimize the scalar
norm over the feasible interval(s) with golden section and polish with
Newton on the stationarity condition.  ``brute_force_oracle`` is the plain
grid scan used to cross-check the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .machine import MachineParams

CURRENT_CIRCLE = "current-circle"
VOLTAGE_ELLIPSE = "voltage-ellipse"

# Exclusion band around the flux-linkage root lambda_m + (L_d - L_q)*i_d = 0,
# where no finite-power solution exists (V s).
DENOM_GUARD = 1e-3

# Relative feasibility tolerance on both constraints.
FEAS_RTOL = 1e-6

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class StaticProblem:
    """Power target (W, negative when generating), speed, bus voltage, machine."""

    p_e: float
    omega_r: float  # electrical rad/s
    v_dc: float  # V
    mp: MachineParams

    def __post_init__(self):
        if not self.omega_r > 0.0:
            raise ValueError("omega_r must be > 0 for a well-posed voltage ellipse")
        if not self.v_dc > 0.0:
            raise ValueError("v_dc must be > 0")


@dataclass(frozen=True)
class StaticSolution:
    i_d: float
    i_q: float
    norm_sq: float
    active_constraints: frozenset[str]
    feasible: bool

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)


def voltage_ellipse_lhs(
    i_d: float, i_q: float, omega_r: float, mp: MachineParams, include_rs: bool = False
):
    """Left-hand side of the voltage constraint (V^2), vectorized over currents.

    The contract form drops the stator resistance; ``include_rs=True``
    evaluates the full quasi-steady terminal voltage for sensitivity checks.
    """
    w = omega_r
    if include_rs:
        v_d = mp.r_s * np.asarray(i_d) - w * mp.l_q * np.asarray(i_q)
        v_q = mp.r_s * np.asarray(i_q) + w * mp.l_d * np.asarray(i_d) + w * mp.lambda_m
        return v_d**2 + v_q**2
    return (w * mp.l_q * np.asarray(i_q)) ** 2 + (w * mp.l_d * np.asarray(i_d) + w * mp.lambda_m) ** 2


def _iq_from_power(prob: StaticProblem, i_d):
    """Solve the power equality for i_q given i_d (affine in i_q)."""
    denom = prob.mp.lambda_m + prob.mp.saliency * np.asarray(i_d)
    return prob.p_e / (1.5 * prob.omega_r * denom)


def constraint_set_membership(
    i_d: float, i_q: float, prob: StaticProblem, rel_tol: float = FEAS_RTOL
) -> dict[str, str]:
    """Classify a current pair against both constraints.

    Returns ``{"current-circle": ..., "voltage-ellipse": ...}`` with values
    in {"interior", "boundary", "exterior"}; the boundary band is
    ``rel_tol`` relative to each limit.
    """
    out = {}
    pairs = (
        (CURRENT_CIRCLE, i_d**2 + i_q**2, prob.mp.i_peak**2),
        (VOLTAGE_ELLIPSE, float(voltage_ellipse_lhs(i_d, i_q, prob.omega_r, prob.mp)), (0.5 * prob.v_dc) ** 2),
    )
    for name, lhs, lim in pairs:
        band = rel_tol * lim
        if lhs < lim - band:
            out[name] = "interior"
        elif lhs <= lim + band:
            out[name] = "boundary"
        else:
            out[name] = "exterior"
    return out


def _active_set(prob: StaticProblem, i_d: float, i_q: float, rel_tol: float = FEAS_RTOL) -> frozenset[str]:
    member = constraint_set_membership(i_d, i_q, prob, rel_tol)
    return frozenset(name for name, where in member.items() if where == "boundary")


def _feasibility_margin(prob: StaticProblem, i_d: float) -> float:
    """Max normalized constraint violation of (i_d, i_q(i_d)); <= 0 means feasible."""
    denom = prob.mp.lambda_m + prob.mp.saliency * i_d
    if abs(denom) <= DENOM_GUARD:
        return 1.0
    i_q = float(_iq_from_power(prob, i_d))
    ipk2 = prob.mp.i_peak**2
    vpk2 = (0.5 * prob.v_dc) ** 2
    circ = (i_d**2 + i_q**2) / ipk2 - 1.0
    ell = float(voltage_ellipse_lhs(i_d, i_q, prob.omega_r, prob.mp)) / vpk2 - 1.0
    return max(circ, ell)


def _norm_sq(prob: StaticProblem, i_d: float) -> float:
    i_q = float(_iq_from_power(prob, i_d))
    return i_d * i_d + i_q * i_q


def _golden_section(f, lo: float, hi: float, iters: int = 90) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _newton_polish(prob: StaticProblem, x: float, lo: float, hi: float, iters: int = 30) -> float:
    """Newton on the stationarity condition f'(i_d) = 0 of the reduced objective."""
    dl = prob.mp.saliency
    for _ in range(iters):
        denom = prob.mp.lambda_m + dl * x
        if abs(denom) <= DENOM_GUARD:
            break
        i_q = float(_iq_from_power(prob, x))
        g = 2.0 * x - 2.0 * i_q * i_q * dl / denom
        h = 2.0 + 6.0 * i_q * i_q * dl * dl / (denom * denom)
        step = g / h
        x_new = min(hi, max(lo, x - step))
        if abs(x_new - x) <= 1e-14 * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    return x


def _bisect_boundary(prob: StaticProblem, feasible_x: float, infeasible_x: float, iters: int = 80) -> float:
    """Bisect the feasibility indicator between a feasible and an infeasible i_d."""
    a, b = feasible_x, infeasible_x
    for _ in range(iters):
        m = 0.5 * (a + b)
        if _feasibility_margin(prob, m) <= 0.0:
            a = m
        else:
            b = m
    return a


def _best_effort(prob: StaticProblem, grid: np.ndarray) -> StaticSolution:
    """No current pair meets the power target: deliver the closest achievable power.

    For each i_d the power is monotone in i_q, so the extreme sits at the
    tighter of the circle/ellipse bounds on |i_q|; among the scan, keep the
    candidate whose power is closest to the target (ties broken by smaller
    norm).
    """
    mp = prob.mp
    w = prob.omega_r
    vpk2 = (0.5 * prob.v_dc) ** 2
    rad2 = vpk2 - (w * mp.l_d * grid + w * mp.lambda_m) ** 2
    ok = rad2 >= 0.0
    m_ell = np.sqrt(np.maximum(rad2, 0.0)) / (w * mp.l_q)
    m_circ = np.sqrt(np.maximum(mp.i_peak**2 - grid**2, 0.0))
    m = np.minimum(m_ell, m_circ)

    coef = 1.5 * w * (mp.lambda_m + mp.saliency * grid)
    best = None
    for sign in (1.0, -1.0):
        i_q = sign * m
        power = coef * i_q
        miss = np.abs(power - prob.p_e)
        miss[~ok] = np.inf
        j = int(np.argmin(miss))
        cand = (miss[j], grid[j] ** 2 + i_q[j] ** 2, grid[j], float(i_q[j]))
        if best is None or cand[:2] < best[:2]:
            best = cand
    _, nsq, i_d, i_q = best
    return StaticSolution(
        i_d=float(i_d),
        i_q=i_q,
        norm_sq=float(nsq),
        active_constraints=_active_set(prob, float(i_d), i_q, rel_tol=1e-3),
        feasible=False,
    )


def _pick(prob: StaticProblem, candidates: list[tuple[float, float, float]]) -> tuple[float, float]:
    """Lowest-norm candidate; near-ties prefer i_q with the sign of p_e."""
    candidates.sort(key=lambda c: c[0])
    f0, i_d, i_q = candidates[0]
    for f, cd, cq in candidates[1:]:
        if f > f0 * (1.0 + 1e-9) + 1e-12:
            break
        if cq * prob.p_e > i_q * prob.p_e:
            i_d, i_q = cd, cq
    return i_d, i_q


def solve_static(prob: StaticProblem, coarse_points: int = 4001) -> StaticSolution:
    """Global minimum-norm current pair delivering the requested power.

    Coarse vectorized scan over i_d to locate the feasible interval(s),
    bisection-refined interval edges, golden section inside each interval
    and a Newton polish at interior minimizers.  Infeasible power targets
    return the boundary best effort with ``feasible=False``.
    """
    mp = prob.mp
    ipk = mp.i_peak
    grid = np.linspace(-ipk, ipk, coarse_points)

    denom = mp.lambda_m + mp.saliency * grid
    ok = np.abs(denom) > DENOM_GUARD
    i_q = np.full_like(grid, np.inf)
    i_q[ok] = prob.p_e / (1.5 * prob.omega_r * denom[ok])
    norm_sq = grid**2 + i_q**2
    ipk2 = ipk * ipk
    vpk2 = (0.5 * prob.v_dc) ** 2
    feas = (
        ok
        & (norm_sq <= ipk2 * (1.0 + FEAS_RTOL))
        & (voltage_ellipse_lhs(grid, i_q, prob.omega_r, mp) <= vpk2 * (1.0 + FEAS_RTOL))
    )
    if not feas.any():
        return _best_effort(prob, np.linspace(-ipk, ipk, 8001))

    # contiguous feasible runs on the grid
    idx = np.flatnonzero(feas)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    ends = np.r_[idx[breaks], idx[-1]]

    candidates = []
    for s, e in zip(starts, ends):
        lo = grid[s]
        if s > 0 and _feasibility_margin(prob, lo) <= 0.0:
            lo = _bisect_boundary(prob, lo, grid[s - 1])
        hi = grid[e]
        if e < grid.size - 1 and _feasibility_margin(prob, hi) <= 0.0:
            hi = _bisect_boundary(prob, hi, grid[e + 1])

        j = s + int(np.argmin(norm_sq[s : e + 1]))
        b_lo = max(lo, grid[max(j - 1, 0)])
        b_hi = min(hi, grid[min(j + 1, grid.size - 1)])
        x = _golden_section(lambda v: _norm_sq(prob, v), b_lo, b_hi)

        span = hi - lo
        if span > 0 and lo + 1e-9 * span < x < hi - 1e-9 * span:
            x = _newton_polish(prob, x, lo, hi)
        # stationary point may sit at an interval edge (binding constraint)
        for edge in (lo, hi):
            if _feasibility_margin(prob, edge) <= FEAS_RTOL:
                candidates.append((_norm_sq(prob, edge), edge, float(_iq_from_power(prob, edge))))
        candidates.append((_norm_sq(prob, x), x, float(_iq_from_power(prob, x))))

    i_d, i_q_val = _pick(prob, candidates)
    return StaticSolution(
        i_d=i_d,
        i_q=i_q_val,
        norm_sq=i_d * i_d + i_q_val * i_q_val,
        active_constraints=_active_set(prob, i_d, i_q_val),
        feasible=True,
    )


def brute_force_oracle(prob: StaticProblem, grid_step: float) -> StaticSolution:
    """Exhaustive i_d scan at fixed resolution; ground truth for solve_static.

    For each grid i_d the power equality is solved exactly for i_q, both
    constraints are checked, and the minimum-norm feasible candidate wins.
    """
    if not grid_step > 0.0:
        raise ValueError("grid_step must be > 0")
    mp = prob.mp
    ipk = mp.i_peak
    n = int(math.floor(2.0 * ipk / grid_step))
    grid = -ipk + grid_step * np.arange(n + 1)

    denom = mp.lambda_m + mp.saliency * grid
    ok = np.abs(denom) > DENOM_GUARD
    i_q = np.full_like(grid, np.inf)
    i_q[ok] = prob.p_e / (1.5 * prob.omega_r * denom[ok])
    norm_sq = grid**2 + i_q**2
    feas = (
        ok
        & (norm_sq <= ipk * ipk * (1.0 + FEAS_RTOL))
        & (voltage_ellipse_lhs(grid, i_q, prob.omega_r, mp) <= (0.5 * prob.v_dc) ** 2 * (1.0 + FEAS_RTOL))
    )
    if not feas.any():
        # same semantics as solve_static: closest achievable power at a bound
        w = prob.omega_r
        vpk2 = (0.5 * prob.v_dc) ** 2
        rad2 = vpk2 - (w * mp.l_d * grid + w * mp.lambda_m) ** 2
        valid = rad2 >= 0.0
        bound = np.minimum(
            np.sqrt(np.maximum(rad2, 0.0)) / (w * mp.l_q),
            np.sqrt(np.maximum(ipk * ipk - grid**2, 0.0)),
        )
        coef = 1.5 * w * (mp.lambda_m + mp.saliency * grid)
        best = None
        for sign in (1.0, -1.0):
            iq_b = sign * bound
            miss = np.abs(coef * iq_b - prob.p_e)
            miss[~valid] = np.inf
            j = int(np.argmin(miss))
            cand = (miss[j], grid[j] ** 2 + iq_b[j] ** 2, float(grid[j]), float(iq_b[j]))
            if best is None or cand[:2] < best[:2]:
                best = cand
        _, nsq, bd, bq = best
        return StaticSolution(
            i_d=bd, i_q=bq, norm_sq=float(nsq),
            active_constraints=_active_set(prob, bd, bq, rel_tol=1e-3),
            feasible=False,
        )

    masked = np.where(feas, norm_sq, np.inf)
    j = int(np.argmin(masked))
    # near-tie: prefer i_q sharing the sign of the power target
    ties = np.flatnonzero(masked <= masked[j] * (1.0 + 1e-9) + 1e-12)
    for k in ties:
        if i_q[k] * prob.p_e > i_q[j] * prob.p_e:
            j = int(k)
    return StaticSolution(
        i_d=float(grid[j]),
        i_q=float(i_q[j]),
        norm_sq=float(norm_sq[j]),
        active_constraints=_active_set(prob, float(grid[j]), float(i_q[j]), rel_tol=1e-4),
        feasible=True,
    )


def kkt_ratio_residual(prob: StaticProblem, i_d: float, i_q: float) -> float:
    """Relative mismatch of the interior stationarity identity
    i_d/i_q = (L_d-L_q)*i_q / (lambda_m + (L_d-L_q)*i_d)."""
    dl = prob.mp.saliency
    denom = prob.mp.lambda_m + dl * i_d
    lhs = i_d * denom
    rhs = dl * i_q * i_q
    scale = max(abs(lhs), abs(rhs), 1e-12)
    return abs(lhs - rhs) / scale
