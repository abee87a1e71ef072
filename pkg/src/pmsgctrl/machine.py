"""dq-frame model of an interior-PM synchronous generator behind an active rectifier.

Amplitude-invariant (2/3-scaled) rotor-frame transform with an explicit
zero-sequence row, the continuous-time plant (dc link + stator currents),
and the torque/power algebra.  Stator currents use the motor sign
convention, so generation shows up as negative i_q and negative electrical
power; the converter power term in the dc-link equation carries the sign
that charges the bus in that regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveVoltage

TWO_PI = 2.0 * math.pi

# Below this bus voltage the 1/v_dc coupling has no physical meaning; a run
# that gets here has already failed.
DEFAULT_VOLTAGE_FLOOR = 1.0


@dataclass(frozen=True)
class MachineParams:
    """Electrical constants and ratings of the machine."""

    l_d: float  # d-axis inductance (H)
    l_q: float  # q-axis inductance (H)
    r_s: float  # stator resistance (ohm)
    lambda_m: float  # permanent-magnet flux linkage (V s)
    poles: int
    i_peak: float  # phase peak current limit (A)
    t_max: float  # torque rating (N m)
    p_max: float  # power rating (W)
    n_max: float  # speed rating (rpm)

    def __post_init__(self):
        for name in ("l_d", "l_q", "r_s", "lambda_m", "i_peak", "t_max", "p_max", "n_max"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"MachineParams.{name} must be > 0")
        if self.poles < 2 or self.poles % 2 != 0:
            raise ValueError("MachineParams.poles must be a positive even integer")

    @property
    def pole_pairs(self) -> int:
        return self.poles // 2

    @property
    def saliency(self) -> float:
        """L_d - L_q (negative for an interior-magnet rotor with L_q > L_d)."""
        return self.l_d - self.l_q


@dataclass(frozen=True)
class DcLinkParams:
    """Dc-side capacitance, bleed resistance and voltage window."""

    c: float  # F
    r: float  # ohm (parallel bleed)
    v_dc_ref: float  # V
    v_dc_min: float = 420.0  # V
    v_dc_max: float = 670.0  # V

    def __post_init__(self):
        if not self.c > 0.0 or not self.r > 0.0:
            raise ValueError("DcLinkParams.c and .r must be > 0")
        if not 0.0 < self.v_dc_min < self.v_dc_ref < self.v_dc_max:
            raise ValueError("require 0 < v_dc_min < v_dc_ref < v_dc_max")


@dataclass(frozen=True)
class PlantState:
    """Continuous plant state: bus voltage, dq currents, electrical angle."""

    v_dc: float  # V
    i_d: float  # A
    i_q: float  # A
    theta_r: float = 0.0  # rad, wrapped to [0, 2*pi)

    def __post_init__(self):
        if not self.v_dc > 0.0:
            raise ValueError("PlantState.v_dc must be > 0")
        object.__setattr__(self, "theta_r", self.theta_r % TWO_PI)

    def as_array(self) -> np.ndarray:
        return np.array([self.v_dc, self.i_d, self.i_q, self.theta_r], dtype=float)


@dataclass(frozen=True)
class DutyCycles:
    """Per-axis modulation indices, each limited to [-1, 1]."""

    d_d: float
    d_q: float

    def __post_init__(self):
        if abs(self.d_d) > 1.0 + 1e-12 or abs(self.d_q) > 1.0 + 1e-12:
            raise ValueError("duty cycles must lie in [-1, 1]")


@dataclass(frozen=True)
class OperatingPoint:
    """Exogenous drive: electrical/mechanical speed and dc load current."""

    omega_r: float  # electrical rad/s
    omega_m: float  # mechanical rad/s
    i_load: float = 0.0  # A drawn from the dc bus


def rpm_to_electrical(n: float, poles: int, i_load: float = 0.0) -> OperatingPoint:
    """Convert a mechanical speed in rpm to an OperatingPoint.

    omega_m = n * 2*pi / 60 and omega_r = (poles/2) * omega_m.
    """
    if n < 0.0:
        raise ValueError("speed must be >= 0 rpm")
    omega_m = n * TWO_PI / 60.0
    omega_r = (poles // 2) * omega_m
    return OperatingPoint(omega_r=omega_r, omega_m=omega_m, i_load=i_load)


def park_matrix(theta_r: float) -> np.ndarray:
    """3x3 abc -> dq0 matrix, amplitude-invariant scaling."""
    c0 = math.cos(theta_r)
    c1 = math.cos(theta_r - TWO_PI / 3.0)
    c2 = math.cos(theta_r + TWO_PI / 3.0)
    s0 = math.sin(theta_r)
    s1 = math.sin(theta_r - TWO_PI / 3.0)
    s2 = math.sin(theta_r + TWO_PI / 3.0)
    return (2.0 / 3.0) * np.array(
        [
            [c0, c1, c2],
            [-s0, -s1, -s2],
            [0.5, 0.5, 0.5],
        ]
    )


def inverse_park_matrix(theta_r: float) -> np.ndarray:
    """Analytic inverse of :func:`park_matrix` (dq0 -> abc)."""
    c0 = math.cos(theta_r)
    c1 = math.cos(theta_r - TWO_PI / 3.0)
    c2 = math.cos(theta_r + TWO_PI / 3.0)
    s0 = math.sin(theta_r)
    s1 = math.sin(theta_r - TWO_PI / 3.0)
    s2 = math.sin(theta_r + TWO_PI / 3.0)
    return np.array(
        [
            [c0, -s0, 1.0],
            [c1, -s1, 1.0],
            [c2, -s2, 1.0],
        ]
    )


def park_transform(abc, theta_r: float) -> np.ndarray:
    """Map a three-phase triplet to (d, q, 0) at electrical angle theta_r."""
    return park_matrix(theta_r) @ np.asarray(abc, dtype=float)


def inverse_park(dq0, theta_r: float) -> np.ndarray:
    """Map (d, q, 0) back to phase quantities at electrical angle theta_r."""
    return inverse_park_matrix(theta_r) @ np.asarray(dq0, dtype=float)


def plant_derivatives(
    state: PlantState,
    duty: DutyCycles,
    op: OperatingPoint,
    mp: MachineParams,
    dp: DcLinkParams,
    v_floor: float = DEFAULT_VOLTAGE_FLOOR,
) -> np.ndarray:
    """Time derivatives (v_dc', i_d', i_q', theta_r') of the full plant.

    The converter applies v_dq = d_dq * v_dc / 2.  Raises NonPositiveVoltage
    when the bus voltage is at or below ``v_floor``.
    """
    v = state.v_dc
    if v <= v_floor:
        raise NonPositiveVoltage(f"v_dc = {v:.3f} V <= floor {v_floor:.3f} V")
    if not math.isclose(op.omega_r, mp.pole_pairs * op.omega_m, rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("OperatingPoint speeds inconsistent: omega_r != (poles/2) * omega_m")

    w = op.omega_r
    v_d = 0.5 * duty.d_d * v
    v_q = 0.5 * duty.d_q * v
    dv = -v / (dp.r * dp.c) - 1.5 * (v_d * state.i_d + v_q * state.i_q) / (dp.c * v) - op.i_load / dp.c
    did = (-mp.r_s * state.i_d + w * mp.l_q * state.i_q + v_d) / mp.l_d
    diq = (-mp.r_s * state.i_q - w * mp.l_d * state.i_d - w * mp.lambda_m + v_q) / mp.l_q
    return np.array([dv, did, diq, w])


def electrical_torque(i_d: float, i_q: float, mp: MachineParams) -> float:
    """Air-gap torque (N m): magnet term plus reluctance term."""
    return 1.5 * mp.pole_pairs * (mp.lambda_m * i_q + mp.saliency * i_q * i_d)


def electrical_power(i_d: float, i_q: float, omega_r: float, mp: MachineParams) -> float:
    """Air-gap electrical power (W); negative when generating."""
    return 1.5 * omega_r * (mp.lambda_m * i_q + mp.saliency * i_q * i_d)


# Table values for the reference machine (BMW i3 traction machine used as a
# generator).
BMW_I3 = MachineParams(
    l_d=0.090e-3,
    l_q=0.255e-3,
    r_s=5.3e-3,
    lambda_m=0.0385,
    poles=12,
    i_peak=400.0,
    t_max=250.0,
    p_max=125e3,
    n_max=11400.0,
)

PRESETS: dict[str, MachineParams] = {"bmw-i3": BMW_I3}


def get_preset(name: str) -> MachineParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown machine preset {name!r}; available: {sorted(PRESETS)}") from None
