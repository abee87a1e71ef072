"""Benchmark the hot simulation kernels: numba JIT vs the pure-Python fallback.

Times the raw segment kernels (RK4 integration + inner control law) on a
fixed workload, excluding the outer NMPC solver, then re-runs the same
workload in a subprocess with PMSGCTRL_DISABLE_NUMBA=1 and prints the
speedup.

    python benchmarks/bench_kernels.py            # compare both paths
    python benchmarks/bench_kernels.py --no-sub   # time this process only
"""

import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np


def workload() -> dict:
    from pmsgctrl import kernels
    from pmsgctrl._accel import NUMBA_ENABLED
    from pmsgctrl.machine import BMW_I3, rpm_to_electrical
    from pmsgctrl.regulator import AxisModel, synthesize_axis

    mp = BMW_I3
    pole = -2 * math.pi * 4000.0
    d_des = synthesize_axis(AxisModel.d_axis(mp), pole)
    q_des = synthesize_axis(AxisModel.q_axis(mp), pole)
    d_model = AxisModel.d_axis(mp)
    q_model = AxisModel.q_axis(mp)
    ctrl = np.array(
        [d_des.k, d_des.t, q_des.k, q_des.t, 0.5 * abs(pole) * 25e-6, 0.0, 0.0,
         d_model.a, d_model.b, q_model.a, q_model.b]
    )
    phys = np.array([mp.l_d, mp.l_q, mp.r_s, mp.lambda_m, 1e-3, 1e4, 1.0, 1340.0])
    w = rpm_to_electrical(7000, mp.poles).omega_r
    times = np.array([0.0])
    omega = np.array([w])
    load = np.array([43.5e3])
    refs = (-62.0, -135.3)

    results = {"numba": NUMBA_ENABLED}
    cases = (
        ("averaged", kernels.run_segment_averaged, 5e-6, 5, (), 8000),
        ("switched", kernels.run_segment_switched, 1e-6, 25, (40e3,), 4000),
    )
    for name, kern, dt, sub, extra, n_ctrl in cases:
        state = np.array([540.0, refs[0], refs[1], 0.0])
        xi = np.array([refs[0], refs[1]])
        uhold = np.zeros(2)
        out = np.empty((n_ctrl, kernels.N_KCOLS))
        args = (state, xi, uhold, refs[0], refs[1], n_ctrl, sub, dt, 0.0, 25e-6,
                *extra, ctrl, phys, times, omega, times, load, out)
        status = kern(*args)  # first call compiles under numba
        assert status == 0
        t0 = time.perf_counter()
        status = kern(*args)
        elapsed = time.perf_counter() - t0
        assert status == 0
        steps = n_ctrl * sub
        results[name] = {
            "seconds": elapsed,
            "rk4_steps": steps,
            "ns_per_step": 1e9 * elapsed / steps,
        }
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--no-sub", action="store_true", help="skip the fallback subprocess")
    parser.add_argument("--emit-json", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    results = workload()
    if args.emit_json:
        print(json.dumps(results))
        return 0

    def report(res):
        mode = "numba" if res["numba"] else "python"
        for fid in ("averaged", "switched"):
            r = res[fid]
            print(
                f"[{mode:6s}] {fid:8s}: {r['seconds'] * 1e3:9.2f} ms for {r['rk4_steps']} RK4 steps "
                f"({r['ns_per_step']:9.1f} ns/step)"
            )

    report(results)
    if args.no_sub:
        return 0

    env = dict(os.environ)
    env["PMSGCTRL_DISABLE_NUMBA"] = "1" if results["numba"] else "0"
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--no-sub", "--emit-json"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    other = json.loads(proc.stdout)
    report(other)
    for fid in ("averaged", "switched"):
        fast, slow = results[fid]["seconds"], other[fid]["seconds"]
        if not results["numba"]:
            fast, slow = slow, fast
        print(f"{fid}: numba speedup {slow / fast:.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
