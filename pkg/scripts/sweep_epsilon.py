#!/usr/bin/env python3
"""Coverage against the privacy budget (and optionally the profile threshold)."""

import argparse
import dataclasses
import math
from pathlib import Path

from geocover.harness import ExperimentConfig, run_experiment

p = argparse.ArgumentParser()
p.add_argument("--trials", type=int, default=20)
p.add_argument("--deltas", type=float, nargs="+", default=[0.7])
p.add_argument("--workers", type=int, default=1)
p.add_argument("--out-dir", default="results/sweep")
args = p.parse_args()

cfg = dataclasses.replace(ExperimentConfig(), epsilons=tuple(math.log(v) for v in (2, 4, 6, 8)),
                          deltas=tuple(args.deltas))
rep = run_experiment(cfg, trials=args.trials, workers=args.workers)
out = Path(args.out_dir)
out.mkdir(parents=True, exist_ok=True)
rep.to_csv(out / "report.csv")
rep.to_json(out / "report.json")
print("method   eps     delta  coverage")
for s in sorted(rep.summary(), key=lambda s: (s["method"], s["delta"], s["epsilon"])):
    print(f"{s['method']:8s} {s['epsilon']:.3f}  {s['delta']:.2f}   {s['coverage_mean']:.4f} ± {s['coverage_stderr']:.4f}")
