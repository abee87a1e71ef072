"""Scenario configuration files: flat sections of key = value lines.

Values carry explicit unit suffixes (``l_d = 0.090mH``, ``load =
0:43.5kW, 0.04:62.25kW``) so unit mistakes fail at parse time.  Unknown
sections or keys are rejected with the offending line number.  All units
are SI once parsed, except speeds (rpm).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .errors import ConfigError
from .machine import DcLinkParams, MachineParams, get_preset, PRESETS
from .nmpc import NmpcConfig
from .simulate import Scenario

TWO_PI = 2.0 * math.pi

# factor tables per quantity kind; bare numbers mean the SI base unit
_UNITS: dict[str, dict[str, float]] = {
    "inductance": {"": 1.0, "H": 1.0, "mH": 1e-3, "uH": 1e-6},
    "capacitance": {"": 1.0, "F": 1.0, "mF": 1e-3, "uF": 1e-6, "nF": 1e-9},
    "resistance": {"": 1.0, "ohm": 1.0, "Ohm": 1.0, "mohm": 1e-3, "kohm": 1e3, "Mohm": 1e6},
    "voltage": {"": 1.0, "V": 1.0, "kV": 1e3},
    "current": {"": 1.0, "A": 1.0, "kA": 1e3},
    "power": {"": 1.0, "W": 1.0, "kW": 1e3, "MW": 1e6},
    "time": {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6},
    "flux": {"": 1.0, "Vs": 1.0, "mVs": 1e-3, "Wb": 1.0},
    "torque": {"": 1.0, "Nm": 1.0},
    "speed": {"": 1.0, "rpm": 1.0, "krpm": 1e3},
    "frequency": {"": 1.0, "Hz": 1.0, "kHz": 1e3},
    "plain": {"": 1.0},
}

_QTY_RE = re.compile(r"^([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([a-zA-Z]*)$")


def parse_quantity(text: str, kind: str, key: str, lineno: int = 0) -> float:
    m = _QTY_RE.match(text.strip())
    if m is None:
        raise ConfigError(f"line {lineno}: key '{key}': cannot parse quantity {text!r}")
    value, suffix = m.groups()
    table = _UNITS[kind]
    if suffix not in table:
        raise ConfigError(
            f"line {lineno}: key '{key}': unit {suffix!r} is not a {kind} unit "
            f"(expected one of {sorted(u for u in table if u)})"
        )
    return float(value) * table[suffix]


def _parse_bool(text: str, key: str, lineno: int) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"line {lineno}: key '{key}': expected a boolean, got {text!r}")


def _parse_int(text: str, key: str, lineno: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"line {lineno}: key '{key}': expected an integer, got {text!r}") from None


def _parse_profile(text: str, kind: str, key: str, lineno: int):
    """'0:43.5kW, 0.04:62.25kW' -> ((0.0, 43500.0), (0.04, 62250.0)); a bare
    quantity is shorthand for a constant profile."""
    if ":" not in text:
        return ((0.0, parse_quantity(text, kind, key, lineno)),)
    points = []
    for part in text.split(","):
        try:
            t_str, v_str = part.split(":")
        except ValueError:
            raise ConfigError(f"line {lineno}: key '{key}': malformed profile entry {part!r}") from None
        t = parse_quantity(t_str, "time", key, lineno)
        v = parse_quantity(v_str, kind, key, lineno)
        points.append((t, v))
    return tuple(points)


_MACHINE_KEYS = {
    "preset": None,
    "l_d": "inductance",
    "l_q": "inductance",
    "r_s": "resistance",
    "lambda_m": "flux",
    "poles": None,
    "i_peak": "current",
    "t_max": "torque",
    "p_max": "power",
    "n_max": "speed",
}
_DC_KEYS = {
    "c": "capacitance",
    "r": "resistance",
    "v_dc_ref": "voltage",
    "v_dc_min": "voltage",
    "v_dc_max": "voltage",
}
_CTRL_KEYS = {
    "inner_pole_hz": "frequency",
    "observer": None,
    "observer_gain_hz": "frequency",
    "decouple_prediction": None,
    "t_s_inner": "time",
    "t_s_outer": "time",
    "horizon": None,
    "q_voltage": "plain",
    "q_integral": "plain",
    "r_current": "plain",
    "max_sqp_iters": None,
    "kkt_tol": "plain",
}
_SCENARIO_KEYS = {
    "fidelity": None,
    "duration": "time",
    "dt": "time",
    "f_sw": "frequency",
    "speed": "speed",
    "load": "power",
    "warmup": "time",
}
_OUTPUT_KEYS = {"decimation": None, "trace_file": None, "metrics_file": None}

_SECTIONS = {
    "machine": _MACHINE_KEYS,
    "dc_link": _DC_KEYS,
    "controller": _CTRL_KEYS,
    "scenario": _SCENARIO_KEYS,
    "output": _OUTPUT_KEYS,
}


@dataclass
class OutputOptions:
    decimation: int = 1
    trace_file: str = "trace.csv"
    metrics_file: str = "metrics.json"


def _read_sections(text: str):
    """Section -> {key: (value, lineno)} with unknown keys rejected."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            current = name
            sections.setdefault(name, {})
            continue
        if current is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SECTIONS[current]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' in section [{current}]")
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}' in section [{current}]")
        sections[current][key] = (value, lineno)
    return sections


def _machine_from(section: dict[str, tuple[str, int]]) -> MachineParams:
    if "preset" in section:
        name, lineno = section["preset"]
        extras = sorted(set(section) - {"preset"})
        if extras:
            raise ConfigError(f"line {lineno}: preset cannot be combined with explicit keys {extras}")
        name = name.strip()
        if name not in PRESETS:
            raise ConfigError(f"line {lineno}: unknown machine preset {name!r}")
        return get_preset(name)
    required = set(_MACHINE_KEYS) - {"preset"}
    missing = sorted(required - set(section))
    if missing:
        raise ConfigError(f"[machine] section missing keys: {missing}")
    kw = {}
    for key, (value, lineno) in section.items():
        if key == "poles":
            kw[key] = _parse_int(value, key, lineno)
        else:
            kw[key] = parse_quantity(value, _MACHINE_KEYS[key], key, lineno)
    try:
        return MachineParams(**kw)
    except ValueError as exc:
        raise ConfigError(f"[machine]: {exc}") from None


def load_scenario(path) -> tuple[Scenario, OutputOptions]:
    """Parse a config file into a Scenario plus output options."""
    with open(path) as fh:
        text = fh.read()
    return parse_scenario(text)


def parse_scenario(text: str) -> tuple[Scenario, OutputOptions]:
    sections = _read_sections(text)

    machine = _machine_from(sections.get("machine", {"preset": ("bmw-i3", 0)}))

    dc_kw = {}
    for key, (value, lineno) in sections.get("dc_link", {}).items():
        dc_kw[key] = parse_quantity(value, _DC_KEYS[key], key, lineno)
    try:
        dc = DcLinkParams(c=dc_kw.get("c", 1e-3), r=dc_kw.get("r", 10e3),
                          v_dc_ref=dc_kw.get("v_dc_ref", 540.0),
                          v_dc_min=dc_kw.get("v_dc_min", 420.0),
                          v_dc_max=dc_kw.get("v_dc_max", 670.0))
    except ValueError as exc:
        raise ConfigError(f"[dc_link]: {exc}") from None

    ctrl = sections.get("controller", {})
    kw: dict = {}
    nmpc_kw: dict = {
        "v_dc_min": dc.v_dc_min,
        "v_dc_max": dc.v_dc_max,
        "v_dc_ref": dc.v_dc_ref,
        "i_peak": machine.i_peak,
    }
    for key, (value, lineno) in ctrl.items():
        if key == "inner_pole_hz":
            kw["inner_pole"] = -TWO_PI * parse_quantity(value, "frequency", key, lineno)
        elif key == "observer":
            mode = value.strip()
            if mode not in ("identity", "luenberger"):
                raise ConfigError(f"line {lineno}: observer must be identity or luenberger")
            kw["observer"] = mode
        elif key == "observer_gain_hz":
            kw["observer_gain"] = TWO_PI * parse_quantity(value, "frequency", key, lineno)
        elif key == "decouple_prediction":
            kw["decouple_prediction"] = _parse_bool(value, key, lineno)
        elif key in ("t_s_inner", "t_s_outer"):
            kw[key] = parse_quantity(value, "time", key, lineno)
        elif key == "horizon":
            nmpc_kw["horizon_n"] = _parse_int(value, key, lineno)
        elif key == "q_voltage":
            nmpc_kw.setdefault("q_weight", [0.1, 9000.0])
            nmpc_kw["q_weight"] = (parse_quantity(value, "plain", key, lineno), nmpc_kw["q_weight"][1])
        elif key == "q_integral":
            nmpc_kw.setdefault("q_weight", [0.1, 9000.0])
            nmpc_kw["q_weight"] = (nmpc_kw["q_weight"][0], parse_quantity(value, "plain", key, lineno))
        elif key == "r_current":
            r = parse_quantity(value, "plain", key, lineno)
            nmpc_kw["r_weight"] = (r, r)
        elif key == "max_sqp_iters":
            nmpc_kw["max_sqp_iters"] = _parse_int(value, key, lineno)
        elif key == "kkt_tol":
            nmpc_kw["kkt_tol"] = parse_quantity(value, "plain", key, lineno)

    scen = sections.get("scenario", {})
    for key, (value, lineno) in scen.items():
        if key == "fidelity":
            kw["fidelity"] = value.strip()
        elif key == "speed":
            kw["speed_rpm"] = _parse_profile(value, "speed", key, lineno)
        elif key == "load":
            kw["load_w"] = _parse_profile(value, "power", key, lineno)
        else:
            kw[key] = parse_quantity(value, _SCENARIO_KEYS[key], key, lineno)

    out = OutputOptions()
    for key, (value, lineno) in sections.get("output", {}).items():
        if key == "decimation":
            out.decimation = _parse_int(value, key, lineno)
            if out.decimation < 1:
                raise ConfigError(f"line {lineno}: decimation must be >= 1")
        else:
            setattr(out, key, value.strip())

    if "t_s_outer" in kw:
        nmpc_kw["t_s"] = kw["t_s_outer"]
    try:
        scenario = Scenario(machine=machine, dc_link=dc, nmpc=NmpcConfig(**nmpc_kw), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return scenario, out
