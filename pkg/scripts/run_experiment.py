#!/usr/bin/env python3
"""Default method comparison; writes report.csv and report.json."""

import argparse
import time
from pathlib import Path

from geocover.harness import METHODS, ExperimentConfig, load_config, run_experiment

p = argparse.ArgumentParser()
p.add_argument("--config")
p.add_argument("--trials", type=int, default=50)
p.add_argument("--workers", type=int, default=1)
p.add_argument("--out-dir", default="results/default")
args = p.parse_args()

cfg = load_config(args.config) if args.config else ExperimentConfig()
out = Path(args.out_dir)
out.mkdir(parents=True, exist_ok=True)
t0 = time.perf_counter()
rep = run_experiment(cfg, METHODS, trials=args.trials, workers=args.workers)
rep.to_csv(out / "report.csv")
rep.to_json(out / "report.json")
for s in rep.summary():
    print(f"{s['method']:8s} coverage {s['coverage_mean']:.4f} ± {s['coverage_stderr']:.4f}  "
          f"selected {s['selected_mean']:.1f}")
print(f"{time.perf_counter() - t0:.0f}s, {len(rep.errors)} failed cells")
