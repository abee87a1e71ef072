"""Closed-loop simulation of the generator, rectifier and two-loop controller.

The plant is integrated with fixed-step RK4, the inner current loop runs
every ``t_s_inner``, the voltage NMPC every ``t_s_outer``, and the load is
a constant-power current sink p(t)/v_dc.  Fidelity "averaged" applies the
duty-cycle coupling directly; "switched" pushes the duties through sine
PWM at the switching frequency.  Traces are sampled once per inner control
period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SegmentTooShort, SimulationDiverged
from .machine import DEFAULT_VOLTAGE_FLOOR, BMW_I3, DcLinkParams, MachineParams
from .nmpc import NmpcConfig, NmpcController, run_reduced_loop
from .optimal import StaticProblem, solve_static
from .regulator import AxisModel, synthesize_axis

TWO_PI = 2.0 * math.pi

TRACE_COLUMNS = [
    "t",
    "v_dc",
    "i_d",
    "i_q",
    "i_d_ref",
    "i_q_ref",
    "d_d",
    "d_q",
    "i_a",
    "i_b",
    "i_c",
    "d_a",
    "d_b",
    "d_c",
    "i_load",
    "p_e",
    "duty_sat",
    "nmpc_iterations",
    "nmpc_kkt_residual",
    "nmpc_converged",
    "nmpc_slack",
    "nmpc_active_circle",
    "nmpc_active_ellipse",
]

TRACE_HEADER = "# pmsgctrl trace v1"


Profile = tuple[tuple[float, float], ...]


def _profile_arrays(profile: Profile, duration: float, what: str):
    times = np.array([p[0] for p in profile], dtype=float)
    vals = np.array([p[1] for p in profile], dtype=float)
    if times.size == 0 or times[0] != 0.0:
        raise ValueError(f"{what} profile must start at t = 0")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError(f"{what} profile switch times must be strictly increasing")
    if times[-1] > duration:
        raise ValueError(f"{what} profile extends beyond the run duration")
    return times, vals


@dataclass
class Scenario:
    """Declarative description of one closed-loop experiment."""

    machine: MachineParams = BMW_I3
    dc_link: DcLinkParams = DcLinkParams(c=1e-3, r=10e3, v_dc_ref=540.0)
    speed_rpm: Profile = ((0.0, 7000.0),)
    load_w: Profile = ((0.0, 0.0),)
    duration: float = 0.08
    fidelity: str = "averaged"
    dt: float = 5e-6
    t_s_inner: float = 25e-6
    t_s_outer: float = 0.5e-3
    f_sw: float = 40e3
    inner_pole: float = -TWO_PI * 4000.0
    observer: str = "identity"
    observer_gain: float = 0.0
    decouple_prediction: bool = True
    nmpc: NmpcConfig = field(default_factory=NmpcConfig)
    warmup: float = 0.2
    v_floor: float = DEFAULT_VOLTAGE_FLOOR
    label: str = ""

    def __post_init__(self):
        if self.fidelity not in ("averaged", "switched"):
            raise ValueError("fidelity must be 'averaged' or 'switched'")
        if self.duration <= 0.0:
            raise ValueError("duration must be > 0")
        max_dt = self.t_s_inner / 5.0 if self.fidelity == "averaged" else 1.0 / (25.0 * self.f_sw)
        if self.dt > max_dt * (1.0 + 1e-9):
            raise ValueError(
                f"integrator step {self.dt} too coarse for {self.fidelity} mode (max {max_dt})"
            )
        for big, small, names in (
            (self.t_s_inner, self.dt, "t_s_inner/dt"),
            (self.t_s_outer, self.t_s_inner, "t_s_outer/t_s_inner"),
            (self.duration, self.t_s_outer, "duration/t_s_outer"),
        ):
            ratio = big / small
            if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
                raise ValueError(f"{names} must be an integer ratio, got {ratio}")
        if self.inner_pole >= 0.0:
            raise ValueError("inner_pole must be negative")
        # discrete-time stability of the zero-order-hold loop
        if abs(1.0 + self.inner_pole * self.t_s_inner) >= 1.0:
            raise ValueError("inner pole too fast for the inner sampling period")
        # the fast loop must settle within one outer sample
        if 5.0 / abs(self.inner_pole) > self.t_s_outer:
            raise ValueError("inner loop does not settle within one outer period")
        _profile_arrays(self.speed_rpm, self.duration, "speed")
        _profile_arrays(self.load_w, self.duration, "load")

    def speed_at(self, t: float) -> float:
        times, vals = _profile_arrays(self.speed_rpm, self.duration, "speed")
        return float(vals[np.searchsorted(times, t, side="right") - 1])

    def load_at(self, t: float) -> float:
        times, vals = _profile_arrays(self.load_w, self.duration, "load")
        return float(vals[np.searchsorted(times, t, side="right") - 1])


@dataclass
class Trace:
    """Column store of one run, sampled at the inner control period."""

    data: dict[str, np.ndarray]
    t_s: float

    def __post_init__(self):
        missing = [c for c in TRACE_COLUMNS if c not in self.data]
        if missing:
            raise ValueError(f"trace missing columns: {missing}")
        n = self.data["t"].size
        for name, col in self.data.items():
            if col.size != n:
                raise ValueError(f"column {name} has wrong length")
            if not np.all(np.isfinite(col)):
                raise ValueError(f"column {name} contains non-finite samples")

    def __len__(self):
        return self.data["t"].size

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def to_csv(self, path, decimation: int = 1):
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        cols = [self.data[c][::decimation] for c in TRACE_COLUMNS]
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("#"):
                raise ValueError("missing trace header line")
            names = fh.readline().strip().split(",")
            raw = np.loadtxt(fh, delimiter=",", ndmin=2)
        data = {name: raw[:, i].copy() for i, name in enumerate(names)}
        t = data["t"]
        t_s = float(t[1] - t[0]) if t.size > 1 else 0.0
        return cls(data=data, t_s=t_s)


def sine_pwm(duty_abc, carrier_phase):
    """Triangle-carrier comparison; returns per-leg switch states in {-1, +1}.

    ``duty_abc`` and ``carrier_phase`` broadcast against each other, e.g. a
    3-vector of duties against a scalar phase, or one duty against an array
    of phases for cycle-average checks.
    """
    duty = np.asarray(duty_abc, dtype=float)
    if np.any(np.abs(duty) > 1.0 + 1e-12):
        raise ValueError("duties must lie in [-1, 1]")
    phase = np.asarray(carrier_phase, dtype=float) % 1.0
    tri = np.where(phase < 0.5, 4.0 * phase - 1.0, 3.0 - 4.0 * phase)
    return np.where(duty >= tri, 1.0, -1.0)


def _synthesize_controls(scenario: Scenario):
    d_model = AxisModel.d_axis(scenario.machine)
    q_model = AxisModel.q_axis(scenario.machine)
    d_des = synthesize_axis(d_model, scenario.inner_pole)
    q_des = synthesize_axis(q_model, scenario.inner_pole)
    alpha = 0.5 * min(abs(scenario.inner_pole) * scenario.t_s_inner, 2.0)
    if not scenario.decouple_prediction:
        alpha = 0.0
    obs_mode = 1.0 if scenario.observer == "luenberger" else 0.0
    ctrl = np.array(
        [
            d_des.k,
            d_des.t,
            q_des.k,
            q_des.t,
            alpha,
            obs_mode,
            scenario.observer_gain,
            d_model.a,
            d_model.b,
            q_model.a,
            q_model.b,
        ]
    )
    return ctrl


def run_closed_loop(scenario: Scenario) -> Trace:
    """Execute the scenario and return the sampled trace.

    Timing hierarchy: the NMPC updates the current references every
    ``t_s_outer`` from the sampled bus voltage and sensed load current; the
    inner loop and trace sampling run every ``t_s_inner``; the plant is
    integrated with RK4 at ``dt``.  Raises SimulationDiverged when the bus
    voltage leaves (v_floor, 2*v_dc_max).
    """
    mp, dp = scenario.machine, scenario.dc_link
    speed_times, speed_vals = _profile_arrays(scenario.speed_rpm, scenario.duration, "speed")
    omega_vals = speed_vals * (TWO_PI / 60.0) * (mp.poles // 2)
    load_times, load_vals = _profile_arrays(scenario.load_w, scenario.duration, "load")

    cfg = scenario.nmpc
    controller = NmpcController(cfg, mp, dp)

    w0 = float(omega_vals[0])
    p0 = float(load_vals[0])
    opt0 = solve_static(StaticProblem(p_e=-p0, omega_r=w0, v_dc=dp.v_dc_ref, mp=mp)) if p0 else None
    if scenario.warmup > 0.0:
        run_reduced_loop(controller, p_load=p0, omega_r=w0, duration=scenario.warmup)
        refs0 = controller.memory.last_refs
    elif opt0 is not None:
        refs0 = (opt0.i_d, opt0.i_q)
    else:
        refs0 = (0.0, 0.0)

    phys = np.array(
        [mp.l_d, mp.l_q, mp.r_s, mp.lambda_m, dp.c, dp.r, scenario.v_floor, 2.0 * dp.v_dc_max]
    )
    ctrl = _synthesize_controls(scenario)

    n_outer = int(round(scenario.duration / scenario.t_s_outer))
    ctrl_per_outer = int(round(scenario.t_s_outer / scenario.t_s_inner))
    sub_steps = int(round(scenario.t_s_inner / scenario.dt))
    n_rows = n_outer * ctrl_per_outer

    state = np.array([dp.v_dc_ref, refs0[0], refs0[1], 0.0])
    xi = np.array([refs0[0], refs0[1]])
    uhold = np.zeros(2)

    kern = np.empty((n_rows, kernels.N_KCOLS))
    refs_cols = np.empty((n_rows, 2))
    diag_cols = np.empty((n_rows, 6))

    segment = (
        kernels.run_segment_averaged if scenario.fidelity == "averaged" else kernels.run_segment_switched
    )

    for m in range(n_outer):
        t = m * scenario.t_s_outer
        v_meas = float(state[0])
        w_now = float(omega_vals[np.searchsorted(speed_times, t, side="right") - 1])
        p_now = float(load_vals[np.searchsorted(load_times, t, side="right") - 1])
        refs, diag = controller.step(v_meas, p_now / v_meas, w_now)

        rows = slice(m * ctrl_per_outer, (m + 1) * ctrl_per_outer)
        args = [
            state,
            xi,
            uhold,
            refs[0],
            refs[1],
            ctrl_per_outer,
            sub_steps,
            scenario.dt,
            t,
            scenario.t_s_inner,
        ]
        if scenario.fidelity == "switched":
            args.append(scenario.f_sw)
        args += [ctrl, phys, speed_times, omega_vals, load_times, load_vals, kern[rows]]
        status = segment(*args)
        if status == 1:
            raise SimulationDiverged(f"bus voltage hit the floor near t = {t:.6f} s")
        if status == 2:
            raise SimulationDiverged(f"bus voltage exceeded {2.0 * dp.v_dc_max:.0f} V near t = {t:.6f} s")

        refs_cols[rows, 0] = refs[0]
        refs_cols[rows, 1] = refs[1]
        diag_cols[rows] = (
            diag["iterations"],
            diag["kkt_residual"],
            float(diag["converged"]),
            float(diag["slack_used"]),
            float(diag["active_circle"]),
            float(diag["active_ellipse"]),
        )

    theta = kern[:, 4]
    i_dq0 = np.stack([kern[:, 2], kern[:, 3], np.zeros(n_rows)])
    d_dq0 = np.stack([kern[:, 5], kern[:, 6], np.zeros(n_rows)])
    i_abc = np.empty((3, n_rows))
    d_abc = np.empty((3, n_rows))
    for leg, shift in enumerate((0.0, -TWO_PI / 3.0, TWO_PI / 3.0)):
        c = np.cos(theta + shift)
        s = np.sin(theta + shift)
        i_abc[leg] = c * i_dq0[0] - s * i_dq0[1]
        d_abc[leg] = c * d_dq0[0] - s * d_dq0[1]

    w_rows = omega_vals[np.searchsorted(speed_times, kern[:, 0], side="right") - 1]
    p_e = 1.5 * w_rows * (mp.lambda_m * kern[:, 3] + mp.saliency * kern[:, 3] * kern[:, 2])

    data = {
        "t": kern[:, 0].copy(),
        "v_dc": kern[:, 1].copy(),
        "i_d": kern[:, 2].copy(),
        "i_q": kern[:, 3].copy(),
        "i_d_ref": refs_cols[:, 0].copy(),
        "i_q_ref": refs_cols[:, 1].copy(),
        "d_d": kern[:, 5].copy(),
        "d_q": kern[:, 6].copy(),
        "i_a": i_abc[0],
        "i_b": i_abc[1],
        "i_c": i_abc[2],
        "d_a": d_abc[0],
        "d_b": d_abc[1],
        "d_c": d_abc[2],
        "i_load": kern[:, 7].copy(),
        "p_e": p_e,
        "duty_sat": kern[:, 9].copy(),
        "nmpc_iterations": diag_cols[:, 0].copy(),
        "nmpc_kkt_residual": diag_cols[:, 1].copy(),
        "nmpc_converged": diag_cols[:, 2].copy(),
        "nmpc_slack": diag_cols[:, 3].copy(),
        "nmpc_active_circle": diag_cols[:, 4].copy(),
        "nmpc_active_ellipse": diag_cols[:, 5].copy(),
    }
    return Trace(data=data, t_s=scenario.t_s_inner)


def compute_metrics(trace: Trace, scenario: Scenario) -> dict:
    """Per-load-segment steady-state and transient figures.

    Steady values average the last 20% of each segment; settling time is
    the first instant after which the bus voltage stays inside the +-1%
    band around the reference until the segment ends.
    """
    t = trace["t"]
    v = trace["v_dc"]
    v_ref = scenario.dc_link.v_dc_ref
    band = 0.01 * v_ref
    load_times, load_vals = _profile_arrays(scenario.load_w, scenario.duration, "load")
    edges = np.append(load_times, scenario.duration)

    segments = []
    for k in range(load_vals.size):
        t0, t1 = edges[k], edges[k + 1]
        sel = (t >= t0) & (t < t1)
        n_sel = int(np.count_nonzero(sel))
        if n_sel < 10:
            raise SegmentTooShort(f"segment [{t0}, {t1}) has only {n_sel} samples")
        tv = t[sel]
        vv = v[sel]
        inside = np.abs(vv - v_ref) <= band
        if not inside[-1]:
            raise SegmentTooShort(f"segment [{t0}, {t1}) never settles into the 1% band")
        outside = np.flatnonzero(~inside)
        settle = 0.0 if outside.size == 0 else float(tv[outside[-1] + 1] - t0)

        tail = slice(n_sel - max(1, n_sel // 5), n_sel)
        i_d_ss = float(np.mean(trace["i_d"][sel][tail]))
        i_q_ss = float(np.mean(trace["i_q"][sel][tail]))
        i_rms = float(np.sqrt(np.mean(trace["i_a"][sel][tail] ** 2)))

        speed = scenario.speed_at(0.5 * (t0 + t1))
        w = speed * (TWO_PI / 60.0) * (scenario.machine.poles // 2)
        p_net = float(load_vals[k]) + v_ref**2 / scenario.dc_link.r
        if p_net > 0.0 and w > 0.0:
            opt = solve_static(
                StaticProblem(p_e=-p_net, omega_r=w, v_dc=v_ref, mp=scenario.machine)
            )
            norm_ratio = math.hypot(i_d_ss, i_q_ss) / max(opt.norm, 1e-9)
            optimum = {"i_d": opt.i_d, "i_q": opt.i_q, "feasible": opt.feasible}
        else:
            norm_ratio = None
            optimum = None

        segments.append(
            {
                "t_start": float(t0),
                "t_end": float(t1),
                "load_w": float(load_vals[k]),
                "speed_rpm": float(speed),
                "i_d_steady": i_d_ss,
                "i_q_steady": i_q_ss,
                "v_dc_settling_s": settle,
                "v_dc_min": float(np.min(vv)),
                "v_dc_max": float(np.max(vv)),
                "v_dc_end": float(vv[-1]),
                "i_phase_rms": i_rms,
                "current_norm_ratio": norm_ratio,
                "static_optimum": optimum,
            }
        )

    return {
        "segments": segments,
        "overall": {
            "v_dc_min": float(np.min(v)),
            "v_dc_max": float(np.max(v)),
            "duty_saturation_samples": int(np.sum(trace["duty_sat"] > 0.0)),
            "nmpc_max_kkt_residual": float(np.max(trace["nmpc_kkt_residual"])),
            "nmpc_unconverged_samples": int(np.sum(trace["nmpc_converged"] < 0.5)),
        },
    }


def _clip_profile(profile: Profile, duration: float) -> Profile:
    return tuple(p for p in profile if p[0] < duration)


def case1(fidelity: str = "averaged", duration: float = 0.08, **overrides) -> Scenario:
    """Load step 43.5 kW -> 62.25 kW at t = 0.04 s, 7000 rpm."""
    kw = dict(
        speed_rpm=((0.0, 7000.0),),
        load_w=_clip_profile(((0.0, 43.5e3), (0.04, 62.25e3)), duration),
        duration=duration,
        fidelity=fidelity,
        label="case1",
    )
    kw.update(overrides)
    if fidelity == "switched" and "dt" not in overrides:
        kw["dt"] = 1e-6
    return Scenario(**kw)


def case2(fidelity: str = "averaged", duration: float = 0.12, **overrides) -> Scenario:
    """Load pulse 34 kW -> 81 kW -> 34 kW at t = 0.04/0.08 s, 8000 rpm."""
    kw = dict(
        speed_rpm=((0.0, 8000.0),),
        load_w=_clip_profile(((0.0, 34e3), (0.04, 81e3), (0.08, 34e3)), duration),
        duration=duration,
        fidelity=fidelity,
        label="case2",
    )
    kw.update(overrides)
    if fidelity == "switched" and "dt" not in overrides:
        kw["dt"] = 1e-6
    return Scenario(**kw)
