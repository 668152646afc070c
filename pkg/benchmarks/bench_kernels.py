"""Compare the compiled and numpy round-timing kernels.

Usage: python benchmarks/bench_kernels.py [--sizes 4,16,32,64] [--reps 2000] [--full-run]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from twinchain import _kernels_py

try:
    from twinchain import _kernels as compiled
except ImportError:
    compiled = None


def inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 0.05, n)
    acc = rng.random(n) > 0.05
    prep = rng.uniform(0.005, 0.2, (n, n))
    comm = rng.uniform(0.005, 0.2, (n, n))
    return t, acc, prep, comm, (2 * n) // 3 + 1


def bench(fn, args, reps):
    best = min(timeit.repeat(lambda: fn(*args), number=reps, repeat=3))
    return best / reps * 1e6


def full_run(pure):
    env = dict(os.environ)
    if pure:
        env["TWINCHAIN_PURE_PYTHON"] = "1"
    code = ("import time; from twinchain import run_simulation, Scenario, BACKEND; t=time.perf_counter(); "
            "r=run_simulation(Scenario()); print(BACKEND, round(time.perf_counter()-t, 2), r.trace_digest[:16])")
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                          check=True).stdout.strip()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="4,16,32,64")
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--full-run", action="store_true", help="also time one baseline run per backend")
    a = ap.parse_args()
    if compiled is None:
        print("compiled extension not built; only the numpy kernel is timed")
    print(f"{'n':>4} {'numpy us':>10} {'compiled us':>12} {'speedup':>8}")
    for n in (int(x) for x in a.sizes.split(",")):
        args = inputs(n)
        py = bench(_kernels_py.round_times, args, a.reps)
        if compiled is None:
            print(f"{n:>4} {py:>10.1f}")
            continue
        for x, y in zip(_kernels_py.round_times(*args), compiled.round_times(*args)):
            assert np.array_equal(x, y), "backends disagree"
        c = bench(compiled.round_times, args, a.reps)
        print(f"{n:>4} {py:>10.1f} {c:>12.1f} {py / c:>7.1f}x")
    if a.full_run:
        print("baseline run:", full_run(False))
        print("baseline run:", full_run(True))


if __name__ == "__main__":
    main()
