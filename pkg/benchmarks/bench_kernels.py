"""Benchmark the Bellman sweep: numba kernel vs pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--states N] [--actions A] [--reps R]

Runs both implementations directly (ignoring ANDERSON_PI_BACKEND) so the
comparison works in a single process.  The first jit call is excluded
from timing (compilation).
"""

import argparse
import time

import numpy as np

from anderson_pi import _kernels, generate_random_mdp

OPS = [("hard-max", 0, 1.0), ("mellowmax", 1, 5.0), ("softmax", 2, 5.0)]


def time_fn(fn, args, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--states", type=int, default=500)
    parser.add_argument("--actions", type=int, default=8)
    parser.add_argument("--reps", type=int, default=20)
    args = parser.parse_args()

    mdp = generate_random_mdp(0, args.states, args.actions, min(8, args.states), 1.0, 0.95)
    rng = np.random.default_rng(1)
    q = rng.uniform(-5, 5, size=(args.states, args.actions))

    print(f"Bellman sweep on {args.states} states x {args.actions} actions "
          f"({args.reps} reps, best-of)")
    print(f"{'operator':<12} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, kind, omega in OPS:
        np_args = (mdp.transitions, mdp.rewards, mdp.gamma, q, kind, omega)
        t_numpy = time_fn(_kernels.bellman_numpy, np_args, args.reps)
        if _kernels.HAVE_NUMBA:
            _kernels.bellman_jit(*np_args)  # compile outside the timer
            t_numba = time_fn(_kernels.bellman_jit, np_args, args.reps)
            a = _kernels.bellman_numpy(*np_args)
            b = _kernels.bellman_jit(*np_args)
            assert np.abs(a - b).max() <= 1e-10, "backends disagree"
            print(f"{name:<12} {t_numpy * 1e3:>10.3f}ms {t_numba * 1e3:>10.3f}ms "
                  f"{t_numpy / t_numba:>8.2f}x")
        else:
            print(f"{name:<12} {t_numpy * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>9}")


if __name__ == "__main__":
    main()
