"""Fast inner current loop: per-axis servo synthesis and the discrete control step.

Each decoupled axis is a scalar system i' = a*i + b*v_tilde tracking a
constant reference.  The controller v_tilde = k*xi + t*ref is synthesized by
pole placement for k and by the regulator (Francis) equations for (pi, t).
Cross-coupling and back-emf are cancelled by feedforward before the duty
cycles are formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UncontrollableAxis, UnstableRequest, VoltageFloor
from .machine import DEFAULT_VOLTAGE_FLOOR, DutyCycles, MachineParams


@dataclass(frozen=True)
class AxisModel:
    """Scalar axis dynamics plus the constant-reference exosystem."""

    a: float  # 1/s
    b: float  # input gain
    c: float = -1.0  # error output row (e = -i + ref)
    q: float = 1.0  # exosystem output weight
    s: float = 0.0  # exosystem matrix (0 = constant reference)

    @classmethod
    def d_axis(cls, mp: MachineParams) -> "AxisModel":
        return cls(a=-mp.r_s / mp.l_d, b=1.0 / mp.l_d)

    @classmethod
    def q_axis(cls, mp: MachineParams) -> "AxisModel":
        return cls(a=-mp.r_s / mp.l_q, b=1.0 / mp.l_q)


@dataclass(frozen=True)
class RegulatorDesign:
    """Synthesized gains for one axis."""

    k: float  # feedback gain (V/A)
    t: float  # feedforward gain (V/A)
    pi: float  # regulator-equation solution
    pole: float  # achieved closed-loop pole (1/s)
    observer_gain: float = 0.0  # 1/s, used only in luenberger mode

    def regulator_residuals(self, model: AxisModel) -> tuple[float, float]:
        r1 = model.a * self.pi + model.b * (self.k * self.pi + self.t) - self.pi * model.s
        r2 = model.c * self.pi + model.q
        return r1, r2


@dataclass
class InnerLoopState:
    """Per-step working memory of the current loop."""

    xi_d: float = 0.0  # current estimate (A)
    xi_q: float = 0.0
    i_d_ref: float = 0.0  # references (A)
    i_q_ref: float = 0.0
    u_d: float = 0.0  # last axis inputs v_tilde (V), kept for the observer
    u_q: float = 0.0


def synthesize_axis(model: AxisModel, desired_pole: float) -> RegulatorDesign:
    """Place the closed-loop pole and solve the regulator equations.

    For the scalar constant-reference case: pi = -q/c = 1 and
    t = (pi*s - a*pi)/b - k*pi, which reduces to t = r_s - k in physical
    units.
    """
    if model.b == 0.0:
        raise UncontrollableAxis("axis input gain b is zero")
    if not desired_pole < 0.0:
        raise UnstableRequest(f"desired pole {desired_pole} is not strictly negative")

    k = (desired_pole - model.a) / model.b
    pi = -model.q / model.c
    t = (pi * model.s - model.a * pi) / model.b - k * pi
    design = RegulatorDesign(k=k, t=t, pi=pi, pole=model.a + model.b * k)
    r1, r2 = design.regulator_residuals(model)
    scale = max(1.0, abs(model.a * pi), abs(model.b * t))
    if abs(r1) > 1e-10 * scale or abs(r2) > 1e-10:
        raise ArithmeticError(f"regulator equations not satisfied: residuals ({r1}, {r2})")
    return design


def decouple(
    v_tilde_d: float,
    v_tilde_q: float,
    i_d: float,
    i_q: float,
    omega_r: float,
    mp: MachineParams,
) -> tuple[float, float]:
    """Add the cross-coupling/back-emf feedforward to the per-axis inputs."""
    v_d = v_tilde_d - omega_r * mp.l_q * i_q
    v_q = v_tilde_q + omega_r * mp.l_d * i_d + omega_r * mp.lambda_m
    return v_d, v_q


def control_step(
    state: InnerLoopState,
    d_design: RegulatorDesign,
    q_design: RegulatorDesign,
    measured: tuple[float, float],
    omega_r: float,
    v_dc: float,
    mp: MachineParams,
    v_floor: float = DEFAULT_VOLTAGE_FLOOR,
    decouple_alpha: float = 0.0,
) -> tuple[DutyCycles, bool]:
    """One zero-order-hold control update; returns duties and a saturation flag.

    ``decouple_alpha`` blends the measured currents toward the references
    before the feedforward terms are evaluated (0 = use the raw
    measurement).  Blending at half the expected per-hold slew centres the
    cancellation over the hold interval, which keeps cross-axis leakage
    during a step well under 1%.
    """
    if v_dc <= v_floor:
        raise VoltageFloor(f"v_dc = {v_dc:.3f} V <= floor {v_floor:.3f} V")

    i_d_m, i_q_m = measured
    v_td = d_design.k * state.xi_d + d_design.t * state.i_d_ref
    v_tq = q_design.k * state.xi_q + q_design.t * state.i_q_ref

    a = decouple_alpha
    i_d_ff = i_d_m + a * (state.i_d_ref - i_d_m)
    i_q_ff = i_q_m + a * (state.i_q_ref - i_q_m)
    v_d, v_q = decouple(v_td, v_tq, i_d_ff, i_q_ff, omega_r, mp)

    d_d = 2.0 * v_d / v_dc
    d_q = 2.0 * v_q / v_dc
    saturated = abs(d_d) > 1.0 or abs(d_q) > 1.0
    if saturated:
        d_d = min(1.0, max(-1.0, d_d))
        d_q = min(1.0, max(-1.0, d_q))
    state.u_d = v_td
    state.u_q = v_tq
    return DutyCycles(d_d=d_d, d_q=d_q), saturated


def observer_step(
    state: InnerLoopState,
    measured: tuple[float, float],
    d_design: RegulatorDesign,
    q_design: RegulatorDesign,
    dt: float,
    mode: str = "identity",
    d_model: AxisModel | None = None,
    q_model: AxisModel | None = None,
) -> InnerLoopState:
    """Update the current estimates xi from the latest measurement.

    Identity mode copies the measurement (phase currents are sensed).
    Luenberger mode propagates xi' = a*xi + b*u + L*(y - xi) with forward
    Euler, using the last applied per-axis inputs stored in ``state``.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if mode == "identity":
        state.xi_d, state.xi_q = measured
        return state
    if mode != "luenberger":
        raise ValueError(f"unknown observer mode {mode!r}")
    if d_model is None or q_model is None:
        raise ValueError("luenberger mode needs the axis models")
    y_d, y_q = measured
    state.xi_d += dt * (
        d_model.a * state.xi_d + d_model.b * state.u_d + d_design.observer_gain * (y_d - state.xi_d)
    )
    state.xi_q += dt * (
        q_model.a * state.xi_q + q_model.b * state.u_q + q_design.observer_gain * (y_q - state.xi_q)
    )
    return state


def step_response(
    mp: MachineParams,
    v_dc: float,
    omega_r: float,
    d_design: RegulatorDesign,
    q_design: RegulatorDesign,
    step: tuple[float, float],
    base: tuple[float, float] = (0.0, 0.0),
    t_s_inner: float = 25e-6,
    dt: float = 5e-6,
    duration: float = 1.0e-3,
    decouple_alpha: float = 0.0,
) -> dict[str, np.ndarray]:
    """Closed-loop reference step on the averaged current subsystem at fixed bus voltage.

    Starts settled at ``base`` references, applies the step at t = 0 and
    integrates the two current states with RK4 between zero-order-hold
    control updates.  Returns time, currents and references.
    """
    n_hold = round(t_s_inner / dt)
    if n_hold < 1 or abs(n_hold * dt - t_s_inner) > 1e-12:
        raise ValueError("dt must divide t_s_inner")
    n_ctrl = int(round(duration / t_s_inner))

    def deriv(i_d, i_q, v_d, v_q):
        did = (-mp.r_s * i_d + omega_r * mp.l_q * i_q + v_d) / mp.l_d
        diq = (-mp.r_s * i_q - omega_r * mp.l_d * i_d - omega_r * mp.lambda_m + v_q) / mp.l_q
        return did, diq

    state = InnerLoopState(xi_d=base[0], xi_q=base[1], i_d_ref=base[0] + step[0], i_q_ref=base[1] + step[1])
    i_d, i_q = base
    ids, iqs, sample_mask, sats = [], [], [], []
    for j in range(n_ctrl):
        observer_step(state, (i_d, i_q), d_design, q_design, t_s_inner)
        duty, sat = control_step(
            state, d_design, q_design, (i_d, i_q), omega_r, v_dc, mp, decouple_alpha=decouple_alpha
        )
        sats.append(sat)
        v_d = 0.5 * duty.d_d * v_dc
        v_q = 0.5 * duty.d_q * v_dc
        for m in range(n_hold):
            k1 = deriv(i_d, i_q, v_d, v_q)
            k2 = deriv(i_d + 0.5 * dt * k1[0], i_q + 0.5 * dt * k1[1], v_d, v_q)
            k3 = deriv(i_d + 0.5 * dt * k2[0], i_q + 0.5 * dt * k2[1], v_d, v_q)
            k4 = deriv(i_d + dt * k3[0], i_q + dt * k3[1], v_d, v_q)
            i_d += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            i_q += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            ids.append(i_d)
            iqs.append(i_q)
            sample_mask.append(m == n_hold - 1)
    t = dt * np.arange(1, len(ids) + 1)
    return {
        "t": t,
        "i_d": np.array(ids),
        "i_q": np.array(iqs),
        "i_d_ref": np.full(len(ids), state.i_d_ref),
        "i_q_ref": np.full(len(ids), state.i_q_ref),
        # True on rows that coincide with the controller's own sampling
        # instants; inter-sample rows additionally show the hold ripple.
        "at_sample": np.array(sample_mask, dtype=bool),
        "saturated": np.array(sats, dtype=bool),
    }
