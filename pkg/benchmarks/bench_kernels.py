"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter, selected with
``FRONTIER_MATCH_DISABLE_NUMBA``, so nested kernels are compiled (or not)
all the way down. Compilation happens in an untimed warm-up call.

    python3 benchmarks/bench_kernels.py --units 500 --repeat 3
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def cases(n, seed=0):
    from frontier_match import dea, matching
    from frontier_match.effects import PipelineConfig, run_pipeline_once
    from frontier_match.synth import ScenarioConfig, generate

    rng = np.random.default_rng(seed)
    X = rng.lognormal(1.0, 0.4, (n, 2))
    Y = X * rng.uniform(0.3, 1.0, (n, 2))
    mask = dea.reference_mask_kernel(X, Y)
    n_t = n // 3
    F = rng.normal(size=(n_t, 4))
    P = rng.normal(size=(n - n_t, 4))
    records = generate(ScenarioConfig(n=n, seed=seed))
    return {
        "dea.score_many": lambda: dea.score_many_kernel(X, Y, X[mask], Y[mask]),
        "dea.reference_mask": lambda: dea.reference_mask_kernel(X, Y),
        "matching.greedy": lambda: matching.greedy_match_kernel(
            F, P, np.ones(4), np.arange(n_t), np.arange(n - n_t), False, np.inf
        ),
        "pipeline.nn_once": lambda: run_pipeline_once(records, PipelineConfig()),
    }


def worker(n, repeat):
    from frontier_match import _accel

    out = {"backend": _accel.BACKEND, "times": {}}
    for name, fn in cases(n).items():
        fn()
        out["times"][name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(json.dumps(out))


def run_backend(disable, n, repeat):
    env = {**os.environ, "FRONTIER_MATCH_DISABLE_NUMBA": "1" if disable else "0", "PYTHONWARNINGS": "ignore"}
    cmd = [sys.executable, __file__, "--worker", "--units", str(n), "--repeat", str(repeat)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        worker(args.units, args.repeat)
        return
    fast = run_backend(False, args.units, args.repeat)
    slow = run_backend(True, args.units, args.repeat)
    print(f"units={args.units} backends={fast['backend']} vs {slow['backend']}")
    print(f"{'kernel':<22}{'numba s':>12}{'numpy s':>12}{'speedup':>10}")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:<22}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>10.1f}")


if __name__ == "__main__":
    main()
