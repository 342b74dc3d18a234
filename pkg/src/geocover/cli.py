"""``geocover`` command line."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from geocover.harness import (
    METHODS,
    ExperimentConfig,
    build_clients,
    evaluate_coverage,
    generate_world,
    load_config,
    parse_epsilon,
    run_experiment,
)
from geocover.locations import load_locations, save_locations
from geocover.mobility import UndefinedMetric, load_traces, profile_matrix, profiling_roc, save_traces
from geocover.privacy import check_prior, uniform_prior
from geocover.selection import DEFAULT_K, kl_divergence, run_selection
from geocover.synthesis import SynthesisConfig, SynthesisInfeasible, synthesize

log = logging.getLogger("geocover")


def _targets(text: str) -> tuple:
    try:
        out = tuple(int(t) for t in text.replace(";", ",").split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad target list {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("empty target list")
    return out


def _epsilon(text: str) -> float:
    try:
        return parse_epsilon(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def load_prior(source: str, n: int) -> np.ndarray:
    """``uniform`` or a ``loc_id,prob`` CSV."""
    if source == "uniform":
        return uniform_prior(n)
    pi = np.zeros(n)
    with open(source, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["loc_id", "prob"]:
            raise ValueError(f"{source}:1: expected header 'loc_id,prob'")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                pi[int(rec[0])] = float(rec[1])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{source}:{lineno}: {exc}") from None
    return check_prior(pi, n)


def save_prior(pi, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loc_id", "prob"])
        for i, p in enumerate(pi):
            w.writerow([i, repr(float(p))])


def _meta_path(traces_path) -> Path:
    p = Path(traces_path)
    return p.with_name(p.stem + ".meta.json")


def _load_traces(args, n_locations: int):
    meta = {}
    mp = Path(args.meta) if getattr(args, "meta", None) else _meta_path(args.traces)
    if mp.exists():
        meta = json.loads(mp.read_text(encoding="utf-8"))
    split = args.split if getattr(args, "split", None) is not None else meta.get("split")
    if split is None:
        raise SystemExit(f"no train/test split: pass --split or provide {mp}")
    return load_traces(args.traces, n_locations, int(split), meta.get("period", getattr(args, "period", "daily")),
                       meta.get("start"), meta.get("end"))


def _out(args, name) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_world(args):
    cfg = _experiment_config(args).world
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    for key in ("rows", "cols", "n_users"):
        if getattr(args, key) is not None:
            cfg = dataclasses.replace(cfg, **{key: getattr(args, key)})
    world = generate_world(cfg)
    tr = world.traces
    save_locations(world.locations, _out(args, "locations.csv"))
    save_traces(tr, _out(args, "traces.csv"))
    save_prior(world.pi_true, _out(args, "pi_true.csv"))
    meta = {"split": tr.split, "period": tr.period, "start": tr.start, "end": tr.end,
            "n_locations": tr.n_locations, "world": dataclasses.asdict(cfg)}
    _out(args, "traces.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    print(f"{len(tr.user_ids)} users, {len(tr.time)} events -> {args.out_dir}")


def cmd_profile(args):
    ls = load_locations(args.locations)
    tr = _load_traces(args, len(ls))
    probs = profile_matrix(tr, args.method)
    path = Path(args.out) if args.out else _out(args, f"profile_{args.method}.csv")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "loc_id", "prob"])
        for i, u in enumerate(tr.user_ids):
            for l in np.flatnonzero(probs[i] > 0):
                w.writerow([u, int(l), repr(float(probs[i, l]))])
    try:
        _, auc = profiling_roc(tr, args.method)
        print(f"{args.method} AUC {auc:.4f}")
    except UndefinedMetric as exc:
        print(f"AUC undefined: {exc}")
    print(f"profile -> {path}")


def cmd_synthesize(args):
    ls = load_locations(args.locations)
    pi = load_prior(args.prior, len(ls))
    cfg = SynthesisConfig(args.epsilon, args.targets, n_users=args.n_users, alpha=args.alpha, rho=args.rho,
                          report_location=args.report_location, beta=args.beta, formulation=args.formulation)
    try:
        res = synthesize(pi, cfg, ls)
    except SynthesisInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    path = Path(args.out) if args.out else _out(args, "policy.json")
    res.policy.to_json(path, report_location=res.report_location, beta=res.beta, objective=res.objective,
                       targets=list(cfg.targets))
    print(f"objective {res.objective:.6f} beta {res.beta:.6g} report {res.report_location} -> {path}")
    return 0


def cmd_select(args):
    ls = load_locations(args.locations)
    tr = _load_traces(args, len(ls))
    clients = build_clients(tr, args.profiler)
    n = len(tr.user_ids)
    alpha = args.alpha if args.alpha is not None else max(1, int(round(args.alpha_frac * n)))
    pi_true = load_prior(args.pi_true, len(ls)) if args.pi_true else None
    prior = load_prior(args.prior, len(ls)) if args.prior else None
    rng = np.random.default_rng(args.seed)
    res = run_selection(clients, ls, args.targets, args.epsilon, args.delta, args.k, alpha, args.rho, rng,
                        prior=prior, pi_true=pi_true)
    doc = {
        "selected": res.selected,
        "alpha": alpha,
        "targets": list(args.targets),
        "epsilon": args.epsilon,
        "delta": args.delta,
        "groups": [{"size": g.size, "report_location": g.report_location, "beta": g.beta,
                    "objective": g.objective, "null_fraction": g.null_fraction, "matches": g.n_match}
                   for g in res.groups],
        "pi_hat": res.pi_hat.tolist(),
    }
    if pi_true is not None:
        doc["kl_trajectory"] = res.kl_trajectory
        doc["kl_final"] = kl_divergence(res.pi_hat, pi_true)
    path = Path(args.report) if args.report else _out(args, "selection.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    print(f"selected {len(res.selected)}/{alpha} -> {path}")
    return 0


def _read_selected(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return [line.strip() for line in text.splitlines() if line.strip()]
    return doc["selected"] if isinstance(doc, dict) else list(doc)


def cmd_evaluate(args):
    ls = load_locations(args.locations)
    tr = _load_traces(args, len(ls))
    selected = _read_selected(args.selected)
    try:
        cov = evaluate_coverage(selected, tr, args.targets)
    except UndefinedMetric as exc:
        print(f"coverage undefined: {exc}", file=sys.stderr)
        return 2
    print(f"coverage {cov:.6f} over {len(selected)} users")
    return 0


def cmd_experiment(args):
    cfg = _experiment_config(args)
    if args.epsilons:
        cfg = dataclasses.replace(cfg, epsilons=tuple(args.epsilons))
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    rep = run_experiment(cfg, methods, trials=args.trials, workers=args.workers)
    rep.to_csv(_out(args, "report.csv"))
    rep.to_json(_out(args, "report.json"))
    for s in rep.summary():
        print(f"{s['method']:8s} eps={s['epsilon']:.4f} delta={s['delta']:.2f} z={s['n_targets']} "
              f"coverage={s['coverage_mean']:.4f}±{s['coverage_stderr']:.4f} selected={s['selected_mean']:.1f}")
    if rep.errors:
        print(f"{len(rep.errors)} failed cells, see report.json", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geocover")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--config", default=None, help="flat key=value experiment/world config")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-world", help="write a synthetic world (locations, traces, true prior)")
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.add_argument("--n-users", type=int)
    g.set_defaults(func=cmd_gen_world)

    def trace_args(sp):
        sp.add_argument("--traces", required=True)
        sp.add_argument("--locations", required=True)
        sp.add_argument("--meta", help="sidecar with split/period (default: <traces>.meta.json)")
        sp.add_argument("--split", type=int, help="train/test boundary, epoch seconds")

    pr = sub.add_parser("profile", help="mobility profiles and profiling AUC")
    trace_args(pr)
    pr.add_argument("--method", choices=("poisson", "frequency"), default="poisson")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_profile)

    s = sub.add_parser("synthesize", help="synthesize an obfuscation policy")
    s.add_argument("--locations", required=True)
    s.add_argument("--prior", default="uniform")
    s.add_argument("--targets", type=_targets, required=True)
    s.add_argument("--epsilon", type=_epsilon, default="ln4")
    s.add_argument("--n-users", type=int, required=True)
    s.add_argument("--alpha", type=int, required=True)
    s.add_argument("--rho", type=float, default=0.95)
    s.add_argument("--beta", type=float)
    s.add_argument("--report-location", type=int, default=0)
    s.add_argument("--formulation", choices=("reduced", "full"), default="reduced")
    s.add_argument("--out")
    s.set_defaults(func=cmd_synthesize)

    se = sub.add_parser("select", help="grouped obfuscated upload and biased selection")
    trace_args(se)
    se.add_argument("--targets", type=_targets, required=True)
    se.add_argument("--epsilon", type=_epsilon, default="ln4")
    se.add_argument("--delta", type=float, default=0.7)
    se.add_argument("--k", type=int, default=DEFAULT_K)
    se.add_argument("--alpha-frac", type=float, default=0.05)
    se.add_argument("--alpha", type=int)
    se.add_argument("--rho", type=float, default=0.95)
    se.add_argument("--profiler", choices=("poisson", "frequency"), default="poisson")
    se.add_argument("--prior", help="initial estimate (default uniform)")
    se.add_argument("--pi-true", help="ground-truth prior for KL tracking")
    se.add_argument("--report")
    se.set_defaults(func=cmd_select)

    ev = sub.add_parser("evaluate", help="coverage of a selection on the test period")
    trace_args(ev)
    ev.add_argument("--selected", required=True, help="selection JSON or one user per line")
    ev.add_argument("--targets", type=_targets, required=True)
    ev.set_defaults(func=cmd_evaluate)

    ex = sub.add_parser("experiment", help="compare methods over repeated trials")
    ex.add_argument("--trials", type=int, default=50)
    ex.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
    ex.add_argument("--epsilons", type=_epsilon, nargs="+")
    ex.add_argument("--workers", type=int, default=1)
    ex.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
