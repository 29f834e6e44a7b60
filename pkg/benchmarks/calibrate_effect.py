"""Pilot run that calibrates the effect-recovery truth.

For each pilot seed the recovery scenario is generated with potential
outcomes, the NN pipeline is run once, and the treatment's score shift is
computed for the matched focal units against the observed matched frontier.
The mean over pilot seeds is the value frozen in ``tests/test_acceptance.py``.
Pilot seeds (``PILOT_SEED0`` onwards) are disjoint from the acceptance seeds.

    python3 benchmarks/calibrate_effect.py --reps 200
"""

import argparse

import numpy as np

from frontier_match.effects import PipelineConfig, run_pipeline_once
from frontier_match.synth import ScenarioConfig, generate, potential_score_shift

PLANTED_EFFECT = 0.09
PILOT_SEED0 = 500_000


def pilot_truth(reps, planted_effect=PLANTED_EFFECT, n=1000, seed0=PILOT_SEED0):
    truths, estimates = [], []
    for s in range(reps):
        cfg = ScenarioConfig(n=n, seed=seed0 + s, planted_effect=planted_effect)
        records, pot = generate(cfg, with_potential=True)
        res = run_pipeline_once(records, PipelineConfig(), seed=0)
        m = res.matched
        truths.append(potential_score_shift(pot, m.focal, m.units()))
        estimates.append(res.ate)
    return np.asarray(truths), np.asarray(estimates)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--effect", type=float, default=PLANTED_EFFECT)
    args = ap.parse_args()
    t, e = pilot_truth(args.reps, args.effect)
    print(f"planted_effect={args.effect} reps={args.reps}")
    print(f"truth mean={t.mean():.6f} sd={t.std(ddof=1):.6f}")
    print(f"NN ATE mean={e.mean():.6f} sd={e.std(ddof=1):.6f}")


if __name__ == "__main__":
    main()
