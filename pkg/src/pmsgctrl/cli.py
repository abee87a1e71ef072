"""Command line entry point.

Subcommands: run a scenario config, print minimum-norm currents for an
operating point, replay the two built-in case studies, and run the
acceptance suite.  Exit codes: 0 success, 1 configuration problem,
2 simulation divergence, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import OutputOptions, load_scenario, parse_quantity
from .errors import ConfigError, SimulationDiverged
from .machine import PRESETS, get_preset, rpm_to_electrical
from .optimal import StaticProblem, brute_force_oracle, solve_static
from .simulate import Scenario, case1, case2, compute_metrics, run_closed_loop

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_VERIFY = 3


def _write_outputs(scenario: Scenario, out_dir: Path, opts: OutputOptions) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = run_closed_loop(scenario)
    metrics = compute_metrics(trace, scenario)
    trace.to_csv(out_dir / opts.trace_file, decimation=opts.decimation)
    with open(out_dir / opts.metrics_file, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one(config_path: str, out_dir: str) -> None:
    scenario, opts = load_scenario(config_path)
    _write_outputs(scenario, Path(out_dir), opts)


def cmd_run(args) -> int:
    configs = args.config
    base = Path(args.out_dir)
    jobs = [(c, str(base) if len(configs) == 1 else str(base / Path(c).stem)) for c in configs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, c, d) for c, d in jobs]
            for fut in futures:
                fut.result()
    else:
        for c, d in jobs:
            _run_one(c, d)
    return EXIT_OK


def cmd_case(args, which: str) -> int:
    builder = case1 if which == "case1" else case2
    kw = {"fidelity": args.fidelity}
    if args.duration is not None:
        kw["duration"] = args.duration
    scenario = builder(**kw)
    _write_outputs(scenario, Path(args.out_dir), OutputOptions(decimation=args.decimation))
    return EXIT_OK


def cmd_optimal_currents(args) -> int:
    power = parse_quantity(args.power, "power", "power")
    speed = parse_quantity(args.speed, "speed", "speed")
    v_dc = parse_quantity(args.v_dc, "voltage", "v_dc")
    try:
        mp = get_preset(args.preset)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    op = rpm_to_electrical(speed, mp.poles)
    prob = StaticProblem(p_e=power, omega_r=op.omega_r, v_dc=v_dc, mp=mp)
    sol = solve_static(prob)
    row = {
        "i_d": sol.i_d,
        "i_q": sol.i_q,
        "norm": sol.norm,
        "feasible": sol.feasible,
        "active": ";".join(sorted(sol.active_constraints)) or "none",
    }
    if args.verify:
        oracle = brute_force_oracle(prob, grid_step=args.grid)
        agrees = (
            sol.feasible == oracle.feasible
            and abs(sol.i_d - oracle.i_d) <= 1.0
            and abs(sol.i_q - oracle.i_q) <= 1.0
        )
        row["oracle_agrees"] = agrees
    if args.json:
        print(json.dumps(row))
    else:
        print(",".join(row))
        print(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row.values()))
    return EXIT_OK


def cmd_verify(_args) -> int:
    from .acceptance import run_all

    return EXIT_OK if run_all(print) else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmsgctrl",
        description="Generator-side dc bus control: simulation, optimization and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate scenario config file(s)")
    p_run.add_argument("config", nargs="+", help="scenario config path(s)")
    p_run.add_argument("out_dir", help="output directory (per-config subdirs when multiple)")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel scenario workers")

    for name, doc in (
        ("case1", "load step 43.5->62.25 kW at 7000 rpm"),
        ("case2", "load pulse 34->81->34 kW at 8000 rpm"),
    ):
        p_case = sub.add_parser(name, help=f"built-in scenario: {doc}")
        p_case.add_argument("out_dir")
        p_case.add_argument("--fidelity", choices=("averaged", "switched"), default="averaged")
        p_case.add_argument("--duration", type=float, default=None, help="override run length (s)")
        p_case.add_argument("--decimation", type=int, default=1)

    p_opt = sub.add_parser("optimal-currents", help="minimum-norm currents for a power target")
    p_opt.add_argument("power", help="e.g. -43.5kW (negative = generation)")
    p_opt.add_argument("speed", help="e.g. 7000rpm")
    p_opt.add_argument("v_dc", help="e.g. 540V")
    p_opt.add_argument("preset", nargs="?", default="bmw-i3", help=f"machine preset {sorted(PRESETS)}")
    p_opt.add_argument("--verify", action="store_true", help="cross-check against the grid oracle")
    p_opt.add_argument("--grid", type=float, default=0.25, help="oracle grid step (A)")
    p_opt.add_argument("--json", action="store_true", help="print one JSON object instead of CSV")

    sub.add_parser("verify", help="run the acceptance suite (exit 3 on failure)")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # let negative quantities like -43.5kW pass through as positionals:
    # pull the known flags forward and fence the rest behind '--'
    if argv and argv[0] == "optimal-currents" and "--" not in argv:
        flags, positionals = [], []
        rest = iter(argv[1:])
        for tok in rest:
            if tok in ("--verify", "--json"):
                flags.append(tok)
            elif tok == "--grid":
                flags.extend([tok, next(rest, "")])
            elif tok.startswith("--grid="):
                flags.append(tok)
            else:
                positionals.append(tok)
        argv = ["optimal-currents", *flags, "--", *positionals]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return cmd_run(args)
        if args.command in ("case1", "case2"):
            return cmd_case(args, args.command)
        if args.command == "optimal-currents":
            return cmd_optimal_currents(args)
        if args.command == "verify":
            return cmd_verify(args)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
