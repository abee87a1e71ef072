import json
import math

import pytest

from pmsgctrl.cli import main
from pmsgctrl.config import parse_quantity, parse_scenario
from pmsgctrl.errors import ConfigError

GOOD_CONFIG = """
# equilibrium hold at light load
[machine]
preset = bmw-i3

[dc_link]
c = 1mF
r = 10kohm
v_dc_ref = 540V

[controller]
inner_pole_hz = 4kHz
observer = identity
t_s_inner = 25us
t_s_outer = 0.5ms
horizon = 10
q_voltage = 0.1
q_integral = 9000
r_current = 0.1

[scenario]
fidelity = averaged
duration = 10ms
dt = 5us
speed = 7000rpm
load = 0:10kW
warmup = 50ms

[output]
decimation = 2
"""


def test_parse_quantity_units():
    assert parse_quantity("0.090mH", "inductance", "l_d") == pytest.approx(0.090e-3)
    assert parse_quantity("43.5kW", "power", "load") == pytest.approx(43.5e3)
    assert parse_quantity("-43.5kW", "power", "load") == pytest.approx(-43.5e3)
    assert parse_quantity("25us", "time", "t_s_inner") == pytest.approx(25e-6)
    assert parse_quantity("5.3mohm", "resistance", "r_s") == pytest.approx(5.3e-3)
    assert parse_quantity("540", "voltage", "v") == 540.0
    with pytest.raises(ConfigError):
        parse_quantity("540bogus", "voltage", "v")
    with pytest.raises(ConfigError):
        parse_quantity("540mH", "voltage", "v")  # wrong dimension


def test_parse_good_config():
    scenario, out = parse_scenario(GOOD_CONFIG)
    assert scenario.machine.l_d == 0.090e-3
    assert scenario.dc_link.c == pytest.approx(1e-3)
    assert scenario.dc_link.r == pytest.approx(10e3)
    assert scenario.duration == pytest.approx(0.010)
    assert scenario.load_w == ((0.0, 10e3),)
    assert scenario.speed_rpm == ((0.0, 7000.0),)
    assert scenario.inner_pole == pytest.approx(-2 * math.pi * 4000.0)
    assert scenario.nmpc.horizon_n == 10
    assert scenario.nmpc.q_weight == (0.1, 9000.0)
    assert out.decimation == 2


def test_profile_parsing():
    scenario, _ = parse_scenario(
        GOOD_CONFIG.replace("load = 0:10kW", "load = 0s:43.5kW, 5ms:62.25kW")
    )
    assert scenario.load_w == ((0.0, 43.5e3), (0.005, 62.25e3))


def test_unknown_key_rejected_with_line():
    bad = GOOD_CONFIG.replace("r_current = 0.1", "r_currant = 0.1")
    with pytest.raises(ConfigError) as exc:
        parse_scenario(bad)
    assert "r_currant" in str(exc.value)
    assert "line" in str(exc.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError):
        parse_scenario("[mystery]\nx = 1\n")


def test_malformed_unit_names_key():
    bad = GOOD_CONFIG.replace("c = 1mF", "c = 1mH")
    with pytest.raises(ConfigError) as exc:
        parse_scenario(bad)
    assert "'c'" in str(exc.value)


def test_preset_with_explicit_keys_rejected():
    bad = GOOD_CONFIG.replace("preset = bmw-i3", "preset = bmw-i3\nl_d = 0.09mH")
    with pytest.raises(ConfigError):
        parse_scenario(bad)


def test_invalid_scenario_becomes_config_error():
    bad = GOOD_CONFIG.replace("dt = 5us", "dt = 20us")
    with pytest.raises(ConfigError):
        parse_scenario(bad)


def test_cli_run_and_determinism(tmp_path):
    cfg = tmp_path / "hold.cfg"
    cfg.write_text(GOOD_CONFIG)
    out1 = tmp_path / "out1"
    out2 = tmp_path / "out2"
    assert main(["run", str(cfg), str(out1)]) == 0
    assert main(["run", str(cfg), str(out2)]) == 0
    t1 = (out1 / "trace.csv").read_bytes()
    t2 = (out2 / "trace.csv").read_bytes()
    assert t1 == t2
    metrics = json.loads((out1 / "metrics.json").read_text())
    assert metrics["segments"][0]["load_w"] == 10e3
    # decimation halves the row count
    n_rows = len(t1.splitlines()) - 2
    assert n_rows == round(0.010 / 25e-6 / 2)


def test_cli_run_multiple_configs(tmp_path):
    cfg1 = tmp_path / "a.cfg"
    cfg2 = tmp_path / "b.cfg"
    cfg1.write_text(GOOD_CONFIG)
    cfg2.write_text(GOOD_CONFIG.replace("load = 0:10kW", "load = 0:20kW"))
    out = tmp_path / "out"
    assert main(["run", str(cfg1), str(cfg2), str(out), "--jobs", "2"]) == 0
    assert (out / "a" / "trace.csv").exists()
    assert (out / "b" / "metrics.json").exists()


def test_explicit_machine_constants():
    explicit = GOOD_CONFIG.replace(
        "preset = bmw-i3",
        "\n".join(
            [
                "l_d = 0.090mH",
                "l_q = 0.255mH",
                "r_s = 5.3mohm",
                "lambda_m = 0.0385Vs",
                "poles = 12",
                "i_peak = 400A",
                "t_max = 250Nm",
                "p_max = 125kW",
                "n_max = 11400rpm",
            ]
        ),
    )
    scenario, _ = parse_scenario(explicit)
    assert scenario.machine.l_q == pytest.approx(0.255e-3)
    assert scenario.machine.poles == 12


def test_builtin_cases_encode_captions():
    from pmsgctrl.simulate import case1, case2

    c1 = case1()
    assert c1.speed_rpm == ((0.0, 7000.0),)
    assert c1.load_w == ((0.0, 43.5e3), (0.04, 62.25e3))
    c2 = case2()
    assert c2.speed_rpm == ((0.0, 8000.0),)
    assert c2.load_w == ((0.0, 34e3), (0.04, 81e3), (0.08, 34e3))


def test_cli_config_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(GOOD_CONFIG.replace("c = 1mF", "c = 1mHenry"))
    assert main(["run", str(cfg), str(tmp_path / "out")]) == 1


def test_cli_missing_file_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg"), str(tmp_path / "out")]) == 1


def test_cli_divergence_exit_code(tmp_path):
    cfg = tmp_path / "div.cfg"
    cfg.write_text(
        GOOD_CONFIG.replace("load = 0:10kW", "load = 0:125000W")
        .replace("speed = 7000rpm", "speed = 1000rpm")
        .replace("warmup = 50ms", "warmup = 0ms")
        .replace("c = 1mF", "c = 0.2mF")
        .replace("duration = 10ms", "duration = 50ms")
    )
    assert main(["run", str(cfg), str(tmp_path / "out")]) == 2


def test_cli_optimal_currents(capsys):
    assert main(["optimal-currents", "-43.5kW", "7000rpm", "540V", "bmw-i3"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    header = out[0].split(",")
    values = out[1].split(",")
    row = dict(zip(header, values))
    assert abs(float(row["i_d"]) - (-62.0)) <= 1.0
    assert abs(float(row["i_q"]) - (-135.3)) <= 1.0
    assert row["feasible"] == "True"


def test_cli_optimal_currents_zero_power(capsys):
    assert main(["optimal-currents", "0W", "7000rpm", "540V"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    row = dict(zip(out[0].split(","), out[1].split(",")))
    assert float(row["i_d"]) == 0.0 and float(row["i_q"]) == 0.0


def test_cli_optimal_currents_verify_json(capsys):
    rc = main(["optimal-currents", "--json", "--verify", "-43.5kW", "7000rpm", "540V"])
    assert rc == 0
    row = json.loads(capsys.readouterr().out)
    assert row["oracle_agrees"] is True


def test_cli_optimal_currents_bad_unit():
    assert main(["optimal-currents", "-43.5kVA", "7000rpm", "540V"]) == 1


def test_cli_case1_short(tmp_path):
    # truncated replay just to exercise the wiring
    assert main(["case1", str(tmp_path), "--duration", "0.01"]) == 0
    assert (tmp_path / "trace.csv").exists()
    assert (tmp_path / "metrics.json").exists()


def test_cli_verify_exit_codes(monkeypatch):
    import pmsgctrl.acceptance as acc

    monkeypatch.setattr(acc, "CRITERIA", [("CX", "stub", lambda: (False, "forced"))])
    assert main(["verify"]) == 3
    monkeypatch.setattr(acc, "CRITERIA", [("CX", "stub", lambda: (True, "ok"))])
    assert main(["verify"]) == 0
