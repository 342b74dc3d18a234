#!/usr/bin/env python3
"""Final KL(pi_hat || pi_true) for several group counts k."""

import argparse

import numpy as np

from geocover.harness import WorldConfig, build_clients, generate_world
from geocover.selection import kl_divergence, run_selection

p = argparse.ArgumentParser()
p.add_argument("--trials", type=int, default=20)
p.add_argument("--ks", type=int, nargs="+", default=[1, 2, 4, 6, 8])
p.add_argument("--epsilon", type=float, default=float(np.log(4)))
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

kl = {k: [] for k in args.ks}
base = []
for trial in range(args.trials):
    w = generate_world(WorldConfig(seed=args.seed + trial))
    n = len(w.locations)
    base.append(kl_divergence(np.full(n, 1 / n), w.pi_true))
    target = (int(np.random.default_rng([args.seed, trial]).integers(n)),)
    for k in args.ks:
        res = run_selection(build_clients(w.traces), w.locations, target, args.epsilon, 0.7, k, 30, 0.95,
                            np.random.default_rng([args.seed, trial, k]), pi_true=w.pi_true)
        kl[k].append(kl_divergence(res.pi_hat, w.pi_true))

print(f"k=0 (uniform)  {np.mean(base):.4f}")
for k, v in kl.items():
    print(f"k={k:<12d} {np.mean(v):.4f} ± {np.std(v, ddof=1) / np.sqrt(len(v)):.4f}")
