"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--grid 2001] [--paths 2000] [--json out.json]

Each backend runs in its own interpreter because the switch is read at import.
Compilation happens in a warm-up call outside the timed region.
"""
import argparse
import json
import os
import subprocess
import sys

_CHILD = r"""
import json, sys, time
from shockmaint import backend_name, discretize_model, example_model, extract_policy, qvi_solve
from shockmaint.simulate import sample_payoffs

grid, paths, reps = map(int, sys.argv[1:4])
model = example_model(1)
dm = discretize_model(model, grid)
vf = qvi_solve(discretize_model(model, 51))
sample_payoffs(model, None, 0.5, 2, horizon=10.0)

def best(fn):
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)

vf = qvi_solve(dm)
pol = extract_policy(dm, vf)
t_solve = best(lambda: qvi_solve(dm))
t_mc = best(lambda: sample_payoffs(model, pol, 0.5, paths, horizon=200.0))
print(json.dumps({"backend": backend_name(), "grid": grid, "sweeps": vf.iterations,
                  "solve_s": t_solve, "per_sweep_us": 1e6 * t_solve / vf.iterations,
                  "paths": paths, "mc_s": t_mc, "per_path_us": 1e6 * t_mc / paths}))
"""


def run_backend(disable, grid, paths, reps):
    env = dict(os.environ)
    env.pop("SHOCKMAINT_DISABLE_NUMBA", None)
    if disable:
        env["SHOCKMAINT_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", _CHILD, str(grid), str(paths), str(reps)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=2001)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--json", default=None, help="also write the results here")
    args = ap.parse_args(argv)
    rows = [run_backend(d, args.grid, args.paths, args.reps) for d in (False, True)]
    print(f"{'backend':8} {'solve s':>9} {'us/sweep':>9} {'MC s':>8} {'us/path':>9}")
    for r in rows:
        print(f"{r['backend']:8} {r['solve_s']:9.3f} {r['per_sweep_us']:9.1f} "
              f"{r['mc_s']:8.3f} {r['per_path_us']:9.1f}")
    fast, slow = rows
    print(f"speed-up: solve x{slow['solve_s'] / fast['solve_s']:.1f}, "
          f"MC x{slow['mc_s'] / fast['mc_s']:.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
