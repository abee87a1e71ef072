"""Hot inner loops of the closed-loop simulator.

Everything here is scalar float math compiled with ``@njit`` (see
``_accel``; set PMSGCTRL_DISABLE_NUMBA=1 for the pure-Python path).  The
kernels advance the plant between two outer-controller updates: RK4 at the
integrator step, zero-order-hold duty updates every inner control period,
optional sine-PWM switching, and one trace row per control period.

Parameter packing (plain float64 arrays keep the signatures nopython-safe):

phys: l_d, l_q, r_s, lambda_m, c_dc, r_dc, v_floor, v_cap
ctrl: k_d, t_d, k_q, t_q, decouple_alpha, obs_mode, obs_gain, a_d, b_d, a_q, b_q

Trace row layout (one row per inner control period):
t, v_dc, i_d, i_q, theta, d_d, d_q, i_load, p_load, saturated
"""

import math

from ._accel import NUMBA_ENABLED, njit  # noqa: F401

N_KCOLS = 10
TWO_PI = 2.0 * math.pi

# phys indices
_LD, _LQ, _RS, _LAM, _CDC, _RDC, _VFLOOR, _VCAP = range(8)
# ctrl indices
_KD, _TD, _KQ, _TQ, _ALPHA, _OBSMODE, _OBSGAIN, _AD, _BD, _AQ, _BQ = range(11)


@njit(cache=True)
def _lookup(times, vals, t):
    i = times.shape[0] - 1
    while i > 0 and t < times[i]:
        i -= 1
    return vals[i]


@njit(cache=True)
def _plant_rhs(v, i_d, i_q, w, v_d, v_q, i_load, phys):
    dv = (
        -v / (phys[_RDC] * phys[_CDC])
        - 1.5 * (v_d * i_d + v_q * i_q) / (phys[_CDC] * v)
        - i_load / phys[_CDC]
    )
    did = (-phys[_RS] * i_d + w * phys[_LQ] * i_q + v_d) / phys[_LD]
    diq = (-phys[_RS] * i_q - w * phys[_LD] * i_d - w * phys[_LAM] + v_q) / phys[_LQ]
    return dv, did, diq


@njit(cache=True)
def _control_law(xi_d, xi_q, id_ref, iq_ref, w, v_dc, ctrl, phys):
    """Duty pair plus saturation flag; mirrors regulator.control_step."""
    v_td = ctrl[_KD] * xi_d + ctrl[_TD] * id_ref
    v_tq = ctrl[_KQ] * xi_q + ctrl[_TQ] * iq_ref
    a = ctrl[_ALPHA]
    i_d_ff = xi_d + a * (id_ref - xi_d)
    i_q_ff = xi_q + a * (iq_ref - xi_q)
    v_d = v_td - w * phys[_LQ] * i_q_ff
    v_q = v_tq + w * phys[_LD] * i_d_ff + w * phys[_LAM]
    d_d = 2.0 * v_d / v_dc
    d_q = 2.0 * v_q / v_dc
    sat = 0.0
    if d_d > 1.0:
        d_d = 1.0
        sat = 1.0
    elif d_d < -1.0:
        d_d = -1.0
        sat = 1.0
    if d_q > 1.0:
        d_q = 1.0
        sat = 1.0
    elif d_q < -1.0:
        d_q = -1.0
        sat = 1.0
    return d_d, d_q, v_td, v_tq, sat


@njit(cache=True)
def _triangle(phase):
    # symmetric carrier: -1 at phase 0, +1 at phase 0.5
    if phase < 0.5:
        return 4.0 * phase - 1.0
    return 3.0 - 4.0 * phase


@njit(cache=True)
def run_segment_averaged(
    state,  # float64[4]: v_dc, i_d, i_q, theta (updated in place)
    xi,  # float64[2]: observer estimates (updated in place)
    uhold,  # float64[2]: last per-axis inputs v_tilde (observer aid)
    id_ref,
    iq_ref,
    n_ctrl,
    sub_steps,
    dt,
    t0,
    t_s_inner,
    ctrl,
    phys,
    omega_times,
    omega_vals,
    load_times,
    load_vals,
    out,  # float64[n_ctrl, N_KCOLS]
):
    """Averaged-converter segment: v_dq = d_dq * v_dc / 2 held per control period.

    Returns 0 on success, 1 if the bus voltage fell to the floor, 2 if it
    exceeded the divergence cap.
    """
    for j in range(n_ctrl):
        t = t0 + j * t_s_inner
        w = _lookup(omega_times, omega_vals, t)
        p_load = _lookup(load_times, load_vals, t)
        v = state[0]
        if v <= phys[_VFLOOR]:
            return 1
        if v >= phys[_VCAP]:
            return 2

        if ctrl[_OBSMODE] > 0.5:
            xi[0] += t_s_inner * (
                ctrl[_AD] * xi[0] + ctrl[_BD] * uhold[0] + ctrl[_OBSGAIN] * (state[1] - xi[0])
            )
            xi[1] += t_s_inner * (
                ctrl[_AQ] * xi[1] + ctrl[_BQ] * uhold[1] + ctrl[_OBSGAIN] * (state[2] - xi[1])
            )
        else:
            xi[0] = state[1]
            xi[1] = state[2]

        d_d, d_q, v_td, v_tq, sat = _control_law(xi[0], xi[1], id_ref, iq_ref, w, v, ctrl, phys)
        uhold[0] = v_td
        uhold[1] = v_tq

        out[j, 0] = t
        out[j, 1] = v
        out[j, 2] = state[1]
        out[j, 3] = state[2]
        out[j, 4] = state[3]
        out[j, 5] = d_d
        out[j, 6] = d_q
        out[j, 7] = p_load / v
        out[j, 8] = p_load
        out[j, 9] = sat

        for s in range(sub_steps):
            ts = t + s * dt
            v0, id0, iq0, th0 = state[0], state[1], state[2], state[3]

            p1 = _lookup(load_times, load_vals, ts)
            k1 = _plant_rhs(v0, id0, iq0, w, 0.5 * d_d * v0, 0.5 * d_q * v0, p1 / v0, phys)

            vh = v0 + 0.5 * dt * k1[0]
            idh = id0 + 0.5 * dt * k1[1]
            iqh = iq0 + 0.5 * dt * k1[2]
            if vh <= phys[_VFLOOR]:
                return 1
            p2 = _lookup(load_times, load_vals, ts + 0.5 * dt)
            k2 = _plant_rhs(vh, idh, iqh, w, 0.5 * d_d * vh, 0.5 * d_q * vh, p2 / vh, phys)

            vh = v0 + 0.5 * dt * k2[0]
            idh = id0 + 0.5 * dt * k2[1]
            iqh = iq0 + 0.5 * dt * k2[2]
            if vh <= phys[_VFLOOR]:
                return 1
            k3 = _plant_rhs(vh, idh, iqh, w, 0.5 * d_d * vh, 0.5 * d_q * vh, p2 / vh, phys)

            vh = v0 + dt * k3[0]
            idh = id0 + dt * k3[1]
            iqh = iq0 + dt * k3[2]
            if vh <= phys[_VFLOOR]:
                return 1
            p4 = _lookup(load_times, load_vals, ts + dt)
            k4 = _plant_rhs(vh, idh, iqh, w, 0.5 * d_d * vh, 0.5 * d_q * vh, p4 / vh, phys)

            state[0] = v0 + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            state[1] = id0 + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            state[2] = iq0 + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            state[3] = (th0 + dt * w) % TWO_PI
            if state[0] <= phys[_VFLOOR]:
                return 1
            if state[0] >= phys[_VCAP]:
                return 2
    return 0


@njit(cache=True)
def _park_vdq(theta, va, vb, vc):
    c0 = math.cos(theta)
    c1 = math.cos(theta - TWO_PI / 3.0)
    c2 = math.cos(theta + TWO_PI / 3.0)
    s0 = math.sin(theta)
    s1 = math.sin(theta - TWO_PI / 3.0)
    s2 = math.sin(theta + TWO_PI / 3.0)
    v_d = (2.0 / 3.0) * (c0 * va + c1 * vb + c2 * vc)
    v_q = -(2.0 / 3.0) * (s0 * va + s1 * vb + s2 * vc)
    return v_d, v_q


@njit(cache=True)
def run_segment_switched(
    state,
    xi,
    uhold,
    id_ref,
    iq_ref,
    n_ctrl,
    sub_steps,
    dt,
    t0,
    t_s_inner,
    f_sw,
    ctrl,
    phys,
    omega_times,
    omega_vals,
    load_times,
    load_vals,
    out,
):
    """Sine-PWM segment: per substep the duty references are rotated to abc,
    compared against the 40 kHz triangular carrier, and the resulting leg
    states (+-v_dc/2) are rotated back before the RK4 update."""
    for j in range(n_ctrl):
        t = t0 + j * t_s_inner
        w = _lookup(omega_times, omega_vals, t)
        p_load = _lookup(load_times, load_vals, t)
        v = state[0]
        if v <= phys[_VFLOOR]:
            return 1
        if v >= phys[_VCAP]:
            return 2

        if ctrl[_OBSMODE] > 0.5:
            xi[0] += t_s_inner * (
                ctrl[_AD] * xi[0] + ctrl[_BD] * uhold[0] + ctrl[_OBSGAIN] * (state[1] - xi[0])
            )
            xi[1] += t_s_inner * (
                ctrl[_AQ] * xi[1] + ctrl[_BQ] * uhold[1] + ctrl[_OBSGAIN] * (state[2] - xi[1])
            )
        else:
            xi[0] = state[1]
            xi[1] = state[2]

        d_d, d_q, v_td, v_tq, sat = _control_law(xi[0], xi[1], id_ref, iq_ref, w, v, ctrl, phys)
        uhold[0] = v_td
        uhold[1] = v_tq

        out[j, 0] = t
        out[j, 1] = v
        out[j, 2] = state[1]
        out[j, 3] = state[2]
        out[j, 4] = state[3]
        out[j, 5] = d_d
        out[j, 6] = d_q
        out[j, 7] = p_load / v
        out[j, 8] = p_load
        out[j, 9] = sat

        for s in range(sub_steps):
            ts = t + s * dt
            v0, id0, iq0, th0 = state[0], state[1], state[2], state[3]

            # abc duties at the current rotor angle, sampled carrier compare
            c0 = math.cos(th0)
            c1 = math.cos(th0 - TWO_PI / 3.0)
            c2 = math.cos(th0 + TWO_PI / 3.0)
            s0 = math.sin(th0)
            s1 = math.sin(th0 - TWO_PI / 3.0)
            s2 = math.sin(th0 + TWO_PI / 3.0)
            da = c0 * d_d - s0 * d_q
            db = c1 * d_d - s1 * d_q
            dc = c2 * d_d - s2 * d_q
            tri = _triangle((ts * f_sw) % 1.0)
            sa = 1.0 if da >= tri else -1.0
            sb = 1.0 if db >= tri else -1.0
            sc = 1.0 if dc >= tri else -1.0

            p1 = _lookup(load_times, load_vals, ts)
            vd1, vq1 = _park_vdq(th0, 0.5 * sa * v0, 0.5 * sb * v0, 0.5 * sc * v0)
            k1 = _plant_rhs(v0, id0, iq0, w, vd1, vq1, p1 / v0, phys)

            vh = v0 + 0.5 * dt * k1[0]
            idh = id0 + 0.5 * dt * k1[1]
            iqh = iq0 + 0.5 * dt * k1[2]
            thh = th0 + 0.5 * dt * w
            if vh <= phys[_VFLOOR]:
                return 1
            p2 = _lookup(load_times, load_vals, ts + 0.5 * dt)
            vdh, vqh = _park_vdq(thh, 0.5 * sa * vh, 0.5 * sb * vh, 0.5 * sc * vh)
            k2 = _plant_rhs(vh, idh, iqh, w, vdh, vqh, p2 / vh, phys)

            vh = v0 + 0.5 * dt * k2[0]
            idh = id0 + 0.5 * dt * k2[1]
            iqh = iq0 + 0.5 * dt * k2[2]
            if vh <= phys[_VFLOOR]:
                return 1
            vdh, vqh = _park_vdq(thh, 0.5 * sa * vh, 0.5 * sb * vh, 0.5 * sc * vh)
            k3 = _plant_rhs(vh, idh, iqh, w, vdh, vqh, p2 / vh, phys)

            vh = v0 + dt * k3[0]
            idh = id0 + dt * k3[1]
            iqh = iq0 + dt * k3[2]
            the = th0 + dt * w
            if vh <= phys[_VFLOOR]:
                return 1
            p4 = _lookup(load_times, load_vals, ts + dt)
            vde, vqe = _park_vdq(the, 0.5 * sa * vh, 0.5 * sb * vh, 0.5 * sc * vh)
            k4 = _plant_rhs(vh, idh, iqh, w, vde, vqe, p4 / vh, phys)

            state[0] = v0 + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            state[1] = id0 + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            state[2] = iq0 + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
            state[3] = (th0 + dt * w) % TWO_PI
            if state[0] <= phys[_VFLOOR]:
                return 1
            if state[0] >= phys[_VCAP]:
                return 2
    return 0
