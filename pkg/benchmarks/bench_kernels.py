"""Compare the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the switch is read at
import time. Usage::

    python3 benchmarks/bench_kernels.py            # both backends, side by side
    python3 benchmarks/bench_kernels.py --worker   # one backend, JSON to stdout
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases():
    from payload_nmpc.coupling import (global_step_jac_kernel, global_step_kernel, phidd_jac_kernel,
                                       plant_substeps_kernel)
    from payload_nmpc.nmpc import build_ocp, solve
    from payload_nmpc.scenario import ScenarioSpec, build_system, generate_references, initial_state
    from payload_nmpc.srb import trot_schedule

    spec = ScenarioSpec("bench", 1.0)
    sysm = build_system(spec)
    feet, m, Ib, Ibinv, ra, rl, g = sysm.kernel_args()
    rng = np.random.default_rng(0)
    x = initial_state(spec) + 1e-3 * rng.standard_normal(36)
    u = np.zeros(34)
    u[2:24:3] = 60.0
    stance = np.ones((2, 4))
    dt = spec.dt_s
    dist = np.zeros((3, 3))

    prob = build_ocp(initial_state(spec), generate_references(spec, 0.0, 8, dt), trot_schedule(0.0, 8, dt),
                     [], spec.weights, None, sysm)

    return {
        "global_step": lambda: global_step_kernel(x, u, dt, stance, feet, m, Ib, Ibinv, ra, rl, g),
        "global_step_jac": lambda: global_step_jac_kernel(x, u, dt, stance, feet, m, Ib, Ibinv, ra, rl, g),
        "phidd_jac": lambda: phidd_jac_kernel(x, u, stance, feet, m, Ib, Ibinv, ra, rl, g),
        "plant_tick": lambda: plant_substeps_kernel(x, u[:24], dist, 16, dt / 16, stance, feet, m, Ib, Ibinv,
                                                    ra, rl, g, 1.0, 50.0),
        "sqp_solve_hover": lambda: solve(prob),
    }


def _time(fn, min_time: float = 0.5, max_reps: int = 2000):
    fn()  # compile / warm caches
    reps, t0 = 0, time.perf_counter()
    samples = []
    while reps < max_reps and time.perf_counter() - t0 < min_time:
        s = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - s)
        reps += 1
    a = np.array(samples)
    return {"median_us": float(np.median(a) * 1e6), "mean_us": float(a.mean() * 1e6), "reps": reps}


def worker(min_time: float):
    from payload_nmpc._jit import USE_NUMBA

    out = {"numba": USE_NUMBA, "results": {k: _time(fn, min_time) for k, fn in _cases().items()}}
    json.dump(out, sys.stdout)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--min-time", type=float, default=0.5, help="seconds per kernel")
    args = ap.parse_args()
    if args.worker:
        worker(args.min_time)
        return
    runs = {}
    for flag in ("1", "0"):
        env = dict(os.environ, PAYLOAD_NMPC_NUMBA=flag)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--min-time", str(args.min_time)],
                              env=env, capture_output=True, text=True, check=True)
        runs[flag] = json.loads(proc.stdout)["results"]
    print(f"{'kernel':<18}{'numba (us)':>14}{'numpy (us)':>14}{'speedup':>10}")
    for k in runs["1"]:
        a, b = runs["1"][k]["median_us"], runs["0"][k]["median_us"]
        print(f"{k:<18}{a:>14.1f}{b:>14.1f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
