import math

import numpy as np
import pytest

from pmsgctrl.errors import NonPositiveVoltage
from pmsgctrl.machine import (
    BMW_I3,
    DcLinkParams,
    DutyCycles,
    MachineParams,
    OperatingPoint,
    PlantState,
    electrical_power,
    electrical_torque,
    get_preset,
    inverse_park,
    park_matrix,
    park_transform,
    plant_derivatives,
    rpm_to_electrical,
)

DC = DcLinkParams(c=1e-3, r=10e3, v_dc_ref=540.0)


def test_park_aligned_cosines_map_to_unit_d():
    for theta in (0.0, 0.7, 2.0, 5.5):
        abc = [math.cos(theta), math.cos(theta - 2 * math.pi / 3), math.cos(theta + 2 * math.pi / 3)]
        dq0 = park_transform(abc, theta)
        assert np.allclose(dq0, [1.0, 0.0, 0.0], atol=1e-12)


def test_park_zero_input():
    assert np.allclose(park_transform([0, 0, 0], 1.234), 0.0)


def test_park_common_mode_goes_to_zero_sequence():
    for theta in (0.0, 1.1, 4.0):
        assert np.allclose(park_transform([1, 1, 1], theta), [0.0, 0.0, 1.0], atol=1e-12)


def test_inverse_park_columns():
    assert np.allclose(inverse_park([1, 0, 0], 0.0), [1.0, -0.5, -0.5], atol=1e-12)
    assert np.allclose(inverse_park([0, 0, 1], 2.5), [1.0, 1.0, 1.0], atol=1e-12)


def test_transform_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        abc = rng.uniform(-100, 100, 3)
        theta = rng.uniform(-10, 10)
        back = inverse_park(park_transform(abc, theta), theta)
        assert np.allclose(back, abc, rtol=1e-12, atol=1e-12 * np.abs(abc).max())


def test_amplitude_invariant_power_identity():
    rng = np.random.default_rng(8)
    for _ in range(200):
        v_abc = rng.uniform(-300, 300, 3)
        i_abc = rng.uniform(-200, 200, 3)
        theta = rng.uniform(0, 2 * math.pi)
        vd, vq, v0 = park_transform(v_abc, theta)
        id_, iq, i0 = park_transform(i_abc, theta)
        lhs = float(v_abc @ i_abc)
        rhs = 1.5 * (vd * id_ + vq * iq) + 3.0 * v0 * i0
        assert math.isclose(lhs, rhs, rel_tol=1e-10, abs_tol=1e-8)


def test_plant_zero_currents_zero_duty():
    op = rpm_to_electrical(7000, BMW_I3.poles)
    state = PlantState(v_dc=540.0, i_d=0.0, i_q=0.0)
    dx = plant_derivatives(state, DutyCycles(0.0, 0.0), op, BMW_I3, DC)
    assert math.isclose(dx[0], -540.0 / (DC.r * DC.c), rel_tol=1e-12)
    assert dx[1] == 0.0
    assert math.isclose(dx[2], -op.omega_r * BMW_I3.lambda_m / BMW_I3.l_q, rel_tol=1e-12)
    assert dx[3] == op.omega_r


def test_plant_resistive_decay():
    op = OperatingPoint(omega_r=0.0, omega_m=0.0)
    state = PlantState(v_dc=540.0, i_d=1.0, i_q=0.0)
    dx = plant_derivatives(state, DutyCycles(0.0, 0.0), op, BMW_I3, DC)
    assert math.isclose(dx[1], -BMW_I3.r_s / BMW_I3.l_d, rel_tol=1e-12)


def test_energy_balance_identity():
    # d/dt(0.5*C*v^2) = -v^2/R - 1.5*(v_d i_d + v_q i_q) - v*i_L with the
    # generator-consistent converter power sign.
    rng = np.random.default_rng(9)
    for _ in range(100):
        v = rng.uniform(300, 700)
        state = PlantState(v_dc=v, i_d=rng.uniform(-300, 300), i_q=rng.uniform(-300, 300))
        duty = DutyCycles(rng.uniform(-1, 1), rng.uniform(-1, 1))
        op = rpm_to_electrical(rng.uniform(1000, 11000), BMW_I3.poles, i_load=rng.uniform(-100, 100))
        dx = plant_derivatives(state, duty, op, BMW_I3, DC)
        lhs = DC.c * v * dx[0]
        v_d, v_q = 0.5 * duty.d_d * v, 0.5 * duty.d_q * v
        rhs = -v * v / DC.r - 1.5 * (v_d * state.i_d + v_q * state.i_q) - v * op.i_load
        assert math.isclose(lhs, rhs, rel_tol=1e-9, abs_tol=1e-6)


def test_voltage_floor_raises():
    op = rpm_to_electrical(7000, 12)
    with pytest.raises(NonPositiveVoltage):
        plant_derivatives(PlantState(v_dc=0.5, i_d=0, i_q=0), DutyCycles(0, 0), op, BMW_I3, DC)


def test_torque_zero_iq():
    for i_d in (-200.0, 0.0, 150.0):
        assert electrical_torque(i_d, 0.0, BMW_I3) == 0.0


def test_torque_reference_point():
    te = electrical_torque(-62.0, -135.3, BMW_I3)
    assert math.isclose(te, -59.34, abs_tol=0.01)
    op = rpm_to_electrical(7000, BMW_I3.poles)
    pe = electrical_power(-62.0, -135.3, op.omega_r, BMW_I3)
    assert math.isclose(pe, te * op.omega_m, rel_tol=1e-12)


def test_power_case_values():
    op = rpm_to_electrical(7000, BMW_I3.poles)
    p1 = electrical_power(-62.0, -135.3, op.omega_r, BMW_I3)
    assert abs(p1 - (-43.5e3)) <= 0.005 * 43.5e3
    p2 = electrical_power(-93.5, -174.9, op.omega_r, BMW_I3)
    assert abs(p2 - (-62.25e3)) <= 0.005 * 62.25e3
    assert electrical_power(123.0, 0.0, op.omega_r, BMW_I3) == 0.0


def test_generation_sign_convention():
    rng = np.random.default_rng(10)
    op = rpm_to_electrical(9000, BMW_I3.poles)
    for _ in range(50):
        i_d, i_q = rng.uniform(-300, 300, 2)
        te = electrical_torque(i_d, i_q, BMW_I3)
        pe = electrical_power(i_d, i_q, op.omega_r, BMW_I3)
        assert (pe < 0) == (te * op.omega_m < 0) or pe == 0


def test_power_torque_relation_exact():
    rng = np.random.default_rng(11)
    for _ in range(100):
        i_d, i_q = rng.uniform(-400, 400, 2)
        n = rng.uniform(100, 11000)
        op = rpm_to_electrical(n, BMW_I3.poles)
        assert math.isclose(
            electrical_power(i_d, i_q, op.omega_r, BMW_I3),
            electrical_torque(i_d, i_q, BMW_I3) * 2 * op.omega_r / BMW_I3.poles,
            rel_tol=1e-12,
            abs_tol=1e-9,
        )


def test_rpm_conversion():
    op = rpm_to_electrical(7000, 12)
    assert math.isclose(op.omega_m, 733.04, abs_tol=0.01)
    assert math.isclose(op.omega_r, 4398.23, abs_tol=0.01)
    zero = rpm_to_electrical(0, 12)
    assert zero.omega_m == 0.0 and zero.omega_r == 0.0
    assert math.isclose(rpm_to_electrical(8000, 12).omega_r, 5026.55, abs_tol=0.01)


def test_preset_table_values():
    mp = get_preset("bmw-i3")
    assert mp.l_d == 0.090e-3
    assert mp.l_q == 0.255e-3
    assert mp.lambda_m == 0.0385
    assert mp.r_s == 5.3e-3
    assert mp.poles == 12
    assert mp.i_peak == 400.0
    assert mp.t_max == 250.0
    assert mp.p_max == 125e3
    assert mp.n_max == 11400.0
    with pytest.raises(KeyError):
        get_preset("nope")


def test_param_validation():
    with pytest.raises(ValueError):
        MachineParams(l_d=-1, l_q=1, r_s=1, lambda_m=1, poles=4, i_peak=1, t_max=1, p_max=1, n_max=1)
    with pytest.raises(ValueError):
        MachineParams(l_d=1, l_q=1, r_s=1, lambda_m=1, poles=5, i_peak=1, t_max=1, p_max=1, n_max=1)
    with pytest.raises(ValueError):
        DcLinkParams(c=1e-3, r=10.0, v_dc_ref=400.0, v_dc_min=420.0, v_dc_max=670.0)


def test_duty_cycle_bounds():
    DutyCycles(1.0, -1.0)
    with pytest.raises(ValueError):
        DutyCycles(1.5, 0.0)
    with pytest.raises(ValueError):
        DutyCycles(0.0, -1.01)


def test_theta_wrapping():
    s = PlantState(v_dc=540.0, i_d=0, i_q=0, theta_r=7.0)
    assert 0.0 <= s.theta_r < 2 * math.pi
    assert math.isclose(s.theta_r, 7.0 - 2 * math.pi, rel_tol=1e-12)


def test_park_matrix_row_sums():
    k = park_matrix(0.93)
    sums = k.sum(axis=1)
    assert abs(sums[0]) < 1e-15 and abs(sums[1]) < 1e-15 and math.isclose(sums[2], 1.0)
