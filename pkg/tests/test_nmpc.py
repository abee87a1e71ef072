import math

import numpy as np
import pytest

from pmsgctrl.errors import NonPositiveVoltage
from pmsgctrl.machine import BMW_I3, DcLinkParams, rpm_to_electrical
from pmsgctrl.nmpc import (
    ControllerMemory,
    NmpcConfig,
    NmpcController,
    ReducedState,
    _active_set_qp,
    build_and_solve_ocp,
    discretize_fe,
    nmpc_step,
    reduced_dynamics,
    run_reduced_loop,
)
from pmsgctrl.optimal import StaticProblem, solve_static

W_7000 = rpm_to_electrical(7000, 12).omega_r
W_8000 = rpm_to_electrical(8000, 12).omega_r
DC = DcLinkParams(c=1e-3, r=10e3, v_dc_ref=540.0)
CFG = NmpcConfig()


def test_reduced_dynamics_zero_input_zero_load():
    x = ReducedState(v_dc=500.0, e_int=0.0)
    dx = reduced_dynamics(x, (0.0, 0.0), 0.0, W_7000, BMW_I3, DC)
    assert math.isclose(dx[0], -500.0 / (DC.r * DC.c), rel_tol=1e-12)
    assert math.isclose(dx[1], 540.0 - 500.0, rel_tol=1e-12)


def test_reduced_dynamics_floor():
    with pytest.raises(NonPositiveVoltage):
        reduced_dynamics(ReducedState(v_dc=0.5, e_int=0.0), (0, 0), 0.0, W_7000, BMW_I3, DC)


def test_reduced_matches_full_model_substitution():
    # applying the quasi-steady stator voltages to the full dc-link equation
    # must reproduce the reduced v_dc dynamics exactly
    rng = np.random.default_rng(5)
    for _ in range(100):
        v = rng.uniform(300, 700)
        i_d, i_q = rng.uniform(-300, 300, 2)
        i_load = rng.uniform(-50, 150)
        w = rpm_to_electrical(rng.uniform(1000, 11000), 12).omega_r
        v_d = BMW_I3.r_s * i_d - w * BMW_I3.l_q * i_q
        v_q = BMW_I3.r_s * i_q + w * BMW_I3.l_d * i_d + w * BMW_I3.lambda_m
        dv_full = -v / (DC.r * DC.c) - 1.5 * (v_d * i_d + v_q * i_q) / (DC.c * v) - i_load / DC.c
        dx = reduced_dynamics(ReducedState(v_dc=v, e_int=0.0), (i_d, i_q), i_load, w, BMW_I3, DC)
        assert math.isclose(dv_full, dx[0], rel_tol=1e-12, abs_tol=1e-9)


def test_reduced_dynamics_case1_residual_small():
    # at the loss-free optimum the residual is the stator copper loss seen
    # by the bus: nonzero but under 1% of the load current slope
    i_load = 43.5e3 / 540.0
    dx = reduced_dynamics(ReducedState(540.0, 0.0), (-62.0, -135.3), i_load, W_7000, BMW_I3, DC)
    assert abs(dx[0]) < 0.02 * (i_load / DC.c)
    assert abs(dx[0]) > 0.0


def test_fe_zero_step_and_fixed_point():
    x = ReducedState(v_dc=540.0, e_int=0.2)
    assert discretize_fe(x, (0, 0), 0.0, W_7000, 0.0, BMW_I3, DC) == x
    # fixed point iff derivative is zero: zero load, v at ref -> e' = 0 but
    # bleed discharges v, so not a fixed point
    x1 = discretize_fe(ReducedState(540.0, 0.0), (0, 0), 0.0, W_7000, CFG.t_s, BMW_I3, DC)
    assert x1.v_dc < 540.0


def test_fe_order_one_convergence():
    # global error over a fixed window scales linearly with the step
    u = (-62.0, -135.3)
    i_load = 70.0
    t_end = 0.02

    def rk4_ref(n_steps):
        from pmsgctrl.nmpc import reduced_dynamics as f

        x = np.array([540.0, 0.0])
        h = t_end / n_steps
        for _ in range(n_steps):
            s = ReducedState(*x)
            k1 = f(s, u, i_load, W_7000, BMW_I3, DC)
            k2 = f(ReducedState(*(x + 0.5 * h * k1)), u, i_load, W_7000, BMW_I3, DC)
            k3 = f(ReducedState(*(x + 0.5 * h * k2)), u, i_load, W_7000, BMW_I3, DC)
            k4 = f(ReducedState(*(x + h * k3)), u, i_load, W_7000, BMW_I3, DC)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    ref = rk4_ref(4000)

    def fe_err(h):
        x = ReducedState(540.0, 0.0)
        for _ in range(int(round(t_end / h))):
            x = discretize_fe(x, u, i_load, W_7000, h, BMW_I3, DC)
        return abs(x.v_dc - ref[0])

    e1 = fe_err(1e-3)
    e2 = fe_err(0.5e-3)
    assert 0.35 < e2 / e1 < 0.65


# --- QP subsolver ---


def test_qp_equality_only():
    # min .5(x0^2+x1^2) - x0 s.t. x0 + x1 = 1 -> x = (1, 0)
    h = np.array([1.0, 1.0])
    g = np.array([-1.0, 0.0])
    a_eq = np.array([[1.0, 1.0]])
    b_eq = np.array([1.0])
    d, lam, mu, ok, _ = _active_set_qp(h, g, a_eq, b_eq, np.zeros((0, 2)), np.zeros(0))
    assert ok
    assert np.allclose(d, [1.0, 0.0], atol=1e-10)


def test_qp_active_inequality():
    # min .5||x||^2 - [2,0]x s.t. x0 <= 1 -> x = (1, 0), mu = 1
    h = np.array([1.0, 1.0])
    g = np.array([-2.0, 0.0])
    a_in = np.array([[1.0, 0.0]])
    b_in = np.array([1.0])
    d, lam, mu, ok, _ = _active_set_qp(h, g, np.zeros((0, 2)), np.zeros(0), a_in, b_in)
    assert ok
    assert np.allclose(d, [1.0, 0.0], atol=1e-10)
    assert np.allclose(mu, [1.0], atol=1e-10)


def test_qp_inactive_inequality():
    h = np.array([1.0, 1.0])
    g = np.array([-0.5, 0.0])
    a_in = np.array([[1.0, 0.0]])
    b_in = np.array([1.0])
    d, lam, mu, ok, _ = _active_set_qp(h, g, np.zeros((0, 2)), np.zeros(0), a_in, b_in)
    assert ok and np.allclose(d, [0.5, 0.0]) and mu[0] == 0.0


def test_qp_multiple_constraints():
    # min .5||x||^2 - [3,3]x s.t. x0 <= 1, x1 <= 1, x0 + x1 <= 1.5
    h = np.array([1.0, 1.0])
    g = np.array([-3.0, -3.0])
    a_in = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    b_in = np.array([1.0, 1.0, 1.5])
    d, lam, mu, ok, _ = _active_set_qp(h, g, np.zeros((0, 2)), np.zeros(0), a_in, b_in)
    assert ok
    assert np.allclose(d, [0.75, 0.75], atol=1e-9)


# --- OCP ---


def test_ocp_at_reference_with_zero_load():
    sol = build_and_solve_ocp(ReducedState(540.0, 0.0), 0.0, W_7000, CFG, BMW_I3, DC)
    assert sol.converged
    assert sol.cost < 1.0
    assert np.all(np.linalg.norm(sol.u_sequence, axis=1) < 20.0)


def test_ocp_respects_current_circle():
    # huge load forces the solver against the limits without violating them
    sol = build_and_solve_ocp(ReducedState(540.0, 0.0), 300.0, W_7000, CFG, BMW_I3, DC)
    norms = np.linalg.norm(sol.u_sequence, axis=1)
    assert np.all(norms <= CFG.i_peak * (1 + 1e-4))


def test_prop3_steady_state_matches_static_optimum():
    # closed loop against the reduced plant at constant load settles on the
    # minimum-norm currents of the static problem
    ctl = NmpcController(CFG, BMW_I3, DC)
    out = run_reduced_loop(ctl, p_load=43.5e3, omega_r=W_7000, duration=0.4)
    u_ss = out["u"][-1]
    assert abs(out["v_dc"][-1] - 540.0) < 0.5
    ref = solve_static(StaticProblem(p_e=-43.5e3, omega_r=W_7000, v_dc=540.0, mp=BMW_I3))
    assert abs(u_ss[0] - ref.i_d) <= 2.0
    assert abs(u_ss[1] - ref.i_q) <= 2.0


def test_case2_heavy_rides_voltage_ellipse():
    ctl = NmpcController(CFG, BMW_I3, DC)
    out = run_reduced_loop(ctl, p_load=81e3, omega_r=W_8000, duration=0.4)
    assert abs(out["v_dc"][-1] - 540.0) < 1.0
    u_ss = out["u"][-1]
    w = W_8000
    lhs = (w * BMW_I3.l_q * u_ss[1]) ** 2 + (w * BMW_I3.l_d * u_ss[0] + w * BMW_I3.lambda_m) ** 2
    vpk2 = (0.5 * out["v_dc"][-1]) ** 2
    assert abs(lhs - vpk2) < 0.01 * vpk2
    # every applied reference respects the circle exactly and the ellipse
    # (at the voltage it was computed against) within 1e-4 relative
    norms = np.linalg.norm(out["u"], axis=1)
    assert np.all(norms <= CFG.i_peak * (1 + 1e-12))
    v_meas = np.concatenate([[540.0], out["v_dc"][:-1]])
    lhs_all = (w * BMW_I3.l_q * out["u"][:, 1]) ** 2 + (
        w * BMW_I3.l_d * out["u"][:, 0] + w * BMW_I3.lambda_m
    ) ** 2
    assert np.all(lhs_all <= (0.5 * v_meas) ** 2 * (1 + 1e-4))
    # planned inputs over the final horizon also respect both limits
    plan = ctl.memory.solution.u_sequence
    assert np.all(np.linalg.norm(plan, axis=1) <= CFG.i_peak * (1 + 1e-6))


def test_integral_action_zeroes_voltage_error():
    ctl = NmpcController(CFG, BMW_I3, DC)
    out = run_reduced_loop(ctl, p_load=30e3, omega_r=W_7000, duration=0.4)
    tail = out["v_dc"][out["t"] > 0.3]
    assert np.max(np.abs(tail - 540.0)) < 0.5


def test_nmpc_step_fixed_point_and_warm_start():
    ctl = NmpcController(CFG, BMW_I3, DC)
    run_reduced_loop(ctl, p_load=43.5e3, omega_r=W_7000, duration=0.3)
    v = 540.0
    refs1, diag1 = ctl.step(v, 43.5e3 / v, W_7000)
    refs2, diag2 = ctl.step(v, 43.5e3 / v, W_7000)
    assert abs(refs1[0] - refs2[0]) < 0.2 and abs(refs1[1] - refs2[1]) < 0.2
    assert diag2["iterations"] <= 6  # warm started

    # cold start lands on the same references
    cold = NmpcController(CFG, BMW_I3, DC)
    cold.memory.e_int = ctl.memory.e_int
    refs_c, diag_c = cold.step(v, 43.5e3 / v, W_7000)
    assert abs(refs_c[0] - refs1[0]) < 0.5
    assert abs(refs_c[1] - refs1[1]) < 0.5
    assert diag_c["iterations"] >= diag2["iterations"]


def test_nmpc_step_load_transition_direction():
    ctl = NmpcController(CFG, BMW_I3, DC)
    run_reduced_loop(ctl, p_load=43.5e3, omega_r=W_7000, duration=0.3)
    out = run_reduced_loop(ctl, p_load=62.25e3, omega_r=W_7000, duration=0.3)
    u_ss = out["u"][-1]
    assert abs(u_ss[0] - (-93.5)) <= 2.5
    assert abs(u_ss[1] - (-174.9)) <= 2.5


def test_predicted_voltages_respect_box():
    # soft box on the planned bus voltage holds within a small tolerance in
    # steady state and across a heavy transient
    ctl = NmpcController(CFG, BMW_I3, DC)
    lo, hi = np.inf, -np.inf
    for p_load in (34e3, 81e3, 34e3):
        run_reduced_loop(ctl, p_load=p_load, omega_r=W_8000, duration=0.1)
        xs = ctl.memory.solution.x_sequence[1:, 0]
        lo, hi = min(lo, xs.min()), max(hi, xs.max())
    assert lo >= CFG.v_dc_min - 0.5
    assert hi <= CFG.v_dc_max + 0.5


def test_nmpc_step_holds_reference_on_solver_failure():
    bad_cfg = NmpcConfig(max_sqp_iters=1, kkt_tol=1e-14)
    mem = ControllerMemory(e_int=0.0, last_refs=(-10.0, -20.0))
    refs, diag = nmpc_step(ReducedState(460.0, 0.0), 200.0, W_7000, bad_cfg, mem, BMW_I3, DC)
    if diag["held"]:
        assert refs == (-10.0, -20.0)
    else:
        assert diag["kkt_residual"] <= 1e-2
