#!/usr/bin/env python3
"""Frequency vs Poisson profiling AUC on fresh synthetic worlds."""

import argparse

from geocover.harness import WorldConfig, generate_world
from geocover.mobility import profiling_roc

p = argparse.ArgumentParser()
p.add_argument("--trials", type=int, default=20)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

wins = 0
for t in range(args.trials):
    w = generate_world(WorldConfig(seed=args.seed + t))
    a = profiling_roc(w.traces, "poisson")[1]
    b = profiling_roc(w.traces, "frequency")[1]
    wins += a >= b
    print(f"world {t:3d}  poisson {a:.4f}  frequency {b:.4f}")
print(f"poisson >= frequency in {wins}/{args.trials}")
