"""Synthetic worlds, baselines and the end-to-end coverage experiment."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from geocover.locations import LocationSet, build_grid
from geocover.mobility import DAY, MobilityProfile, TraceSet, UndefinedMetric, profile_matrix
from geocover.selection import DEFAULT_K, MobileClient, kl_divergence, run_laplace_selection, run_selection
from geocover.synthesis import DEFAULT_RHO

log = logging.getLogger(__name__)

BASE_EPOCH = 1704067200  # 2024-01-01T00:00:00Z, a Monday
METHODS = ("ours", "laplace", "no", "random")
CSV_HEADER = ["method", "epsilon", "delta", "n_targets", "trial", "coverage", "selected", "kl_final"]
NAMED_EPSILONS = {"ln2": math.log(2), "ln4": math.log(4), "ln6": math.log(6), "ln8": math.log(8)}


def parse_epsilon(text) -> float:
    if isinstance(text, (int, float)):
        return float(text)
    key = str(text).strip().lower().replace("(", "").replace(")", "")
    if key in NAMED_EPSILONS:
        return NAMED_EPSILONS[key]
    value = float(key)
    if not value > 0:
        raise ValueError(f"epsilon must be positive, got {text!r}")
    return value


@dataclass
class WorldConfig:
    rows: int = 5
    cols: int = 5
    cell_km: float = 1.0
    n_users: int = 600
    prior: str = "gaussian"  # home distribution: gaussian bump at the centre, or uniform
    prior_sigma_km: float = 1.5
    home_rate: float = 2.0  # mean visits per period at home
    home_rate_spread: float = 0.5  # per-user home rate is home_rate * U(1-s, 1+s)
    background_rate: float = 0.02
    n_spots: int = 3  # extra per-user places with rates U(background_rate, spot_rate_max)
    spot_rate_max: float = 1.5
    train_periods: int = 40
    test_periods: int = 1
    period: str = "daily"
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.n_users < 1:
            raise ValueError("grid dimensions and user count must be positive")
        if not self.home_rate * (1 - self.home_rate_spread) > self.background_rate >= 0:
            raise ValueError("home rate must exceed the background rate")
        if not 0 <= self.home_rate_spread < 1:
            raise ValueError("home_rate_spread must lie in [0, 1)")
        if self.train_periods < 1 or self.test_periods < 1:
            raise ValueError("need at least one training and one test period")
        if self.prior not in ("gaussian", "uniform"):
            raise ValueError(f"unknown prior {self.prior!r}")
        if self.period not in ("daily", "weekly"):
            raise ValueError(f"unknown period {self.period!r}")
        if self.n_spots < 0 or self.n_spots > self.rows * self.cols - 1:
            raise ValueError("n_spots out of range")

    def locations(self) -> LocationSet:
        return build_grid(self.rows, self.cols, self.cell_km)

    def home_distribution(self, ls: Optional[LocationSet] = None) -> np.ndarray:
        ls = ls or self.locations()
        if self.prior == "uniform":
            return np.full(len(ls), 1.0 / len(ls))
        centre = ls.coords.mean(axis=0)
        d2 = ((ls.coords - centre) ** 2).sum(axis=1)
        w = np.exp(-d2 / (2 * self.prior_sigma_km**2))
        return w / w.sum()


@dataclass
class World:
    traces: TraceSet
    pi_true: np.ndarray
    locations: LocationSet
    homes: np.ndarray
    rates: np.ndarray  # users x locations, visits per period

    def __iter__(self):
        return iter((self.traces, self.pi_true))


def generate_world(config: WorldConfig) -> World:
    """Poisson visit counts per (user, location, period) around a drawn home."""
    rng = np.random.default_rng(config.seed)
    ls = config.locations()
    n, U = len(ls), config.n_users
    pi_true = config.home_distribution(ls)
    homes = rng.choice(n, size=U, p=pi_true)
    rates = np.full((U, n), float(config.background_rate))
    if config.n_spots:
        for u in range(U):
            others = np.delete(np.arange(n), homes[u])
            spots = rng.choice(others, size=config.n_spots, replace=False)
            rates[u, spots] = rng.uniform(config.background_rate, config.spot_rate_max, size=config.n_spots)
    s = config.home_rate_spread
    rates[np.arange(U), homes] = config.home_rate * rng.uniform(1 - s, 1 + s, size=U)

    plen = DAY if config.period == "daily" else 7 * DAY
    n_periods = config.train_periods + config.test_periods
    counts = rng.poisson(rates[None, :, :], size=(n_periods, U, n))
    p_idx, u_idx, l_idx = np.nonzero(counts)
    reps = counts[p_idx, u_idx, l_idx]
    p_ev = np.repeat(p_idx, reps)
    times = BASE_EPOCH + p_ev * plen + rng.integers(0, plen, size=len(p_ev))
    traces = TraceSet(
        [f"u{u:05d}" for u in range(U)],
        np.repeat(u_idx, reps), times, np.repeat(l_idx, reps), n,
        period=config.period,
        split=BASE_EPOCH + config.train_periods * plen,
        start=BASE_EPOCH,
        end=BASE_EPOCH + n_periods * plen - 1,
    )
    return World(traces, pi_true, ls, homes, rates)


def build_clients(traces: TraceSet, method: str = "poisson") -> list:
    probs = profile_matrix(traces, method)
    return [MobileClient(u, MobilityProfile(u, probs[i])) for i, u in enumerate(traces.user_ids)]


def evaluate_coverage(selected, traces: TraceSet, targets) -> float:
    """Share of selected users with a test-window visit to any target."""
    selected = list(selected)
    if not selected:
        raise UndefinedMetric("coverage of an empty selection is undefined")
    visits = traces.test_visits()[:, sorted(set(targets))].any(axis=1)
    return float(np.mean([visits[traces.code(u)] for u in selected]))


def run_baseline_no(clients, delta: float, targets, alpha: int, rng) -> list:
    """Unobfuscated uploads; pick up to alpha users whose location is a target."""
    targets = set(targets)
    hits = [c.user for c in clients if c.report(None, delta, rng) in targets]
    order = rng.permutation(len(hits))
    return [hits[i] for i in order[:alpha]]


def run_baseline_random(users, alpha: int, rng) -> list:
    users = list(users)
    idx = rng.choice(len(users), size=min(alpha, len(users)), replace=False)
    return [users[i] for i in idx]


def run_baseline_laplace(clients, ls: LocationSet, epsilon: float, delta: float, targets, alpha: int,
                         rho: float, k: int, rng, pi_true=None) -> list:
    # rho does not enter: the Laplace policy has no free report probability
    return run_laplace_selection(clients, ls, targets, epsilon, delta, k, alpha, rng, pi_true=pi_true).selected


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    epsilons: tuple = (math.log(4),)
    deltas: tuple = (0.7,)
    n_targets: tuple = (1,)
    targets: Optional[tuple] = None  # fixed target set; overrides n_targets
    alpha_frac: float = 0.05
    rho: float = DEFAULT_RHO
    k: int = DEFAULT_K
    profiler: str = "poisson"
    seed: int = 0

    @property
    def alpha(self) -> int:
        return max(1, int(round(self.alpha_frac * self.world.n_users)))


EXPERIMENT_KEYS = {"epsilons", "deltas", "n_targets", "targets", "alpha_frac", "rho", "k", "profiler", "seed",
                   "epsilon", "delta"}


def _parse_list(value, conv):
    return tuple(conv(v) for v in str(value).replace(";", ",").split(",") if v.strip())


def parse_config(text: str) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    world_fields = {f.name: f for f in dataclasses.fields(WorldConfig)}
    world_kw, exp_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("epsilon", "epsilons"):
            exp_kw["epsilons"] = _parse_list(value, parse_epsilon)
        elif key in ("delta", "deltas"):
            exp_kw["deltas"] = _parse_list(value, float)
        elif key == "n_targets":
            exp_kw["n_targets"] = _parse_list(value, int)
        elif key == "targets":
            exp_kw["targets"] = _parse_list(value, int)
        elif key in ("alpha_frac", "rho"):
            exp_kw[key] = float(value)
        elif key in ("k", "seed"):
            exp_kw[key] = int(value)
        elif key == "profiler":
            exp_kw[key] = value
        elif key == "world_seed":
            world_kw["seed"] = int(value)
        elif key in world_fields:
            ftype = world_fields[key].type
            conv = {"int": int, "float": float, "str": str}[ftype if isinstance(ftype, str) else ftype.__name__]
            world_kw[key] = conv(value)
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return ExperimentConfig(world=WorldConfig(**world_kw), **exp_kw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    methods: tuple
    trials: int
    rows: list  # dicts keyed by CSV_HEADER
    errors: list

    def summary(self) -> list:
        groups = {}
        for r in self.rows:
            groups.setdefault((r["method"], r["epsilon"], r["delta"], r["n_targets"]), []).append(r)
        out = []
        for (m, e, d, z), rs in groups.items():
            cov = np.array([r["coverage"] for r in rs], dtype=float)
            ok = cov[~np.isnan(cov)]
            kl = np.array([r["kl_final"] for r in rs], dtype=float)
            kl = kl[~np.isnan(kl)]
            out.append({
                "method": m, "epsilon": e, "delta": d, "n_targets": z,
                "trials": len(rs),
                "coverage_mean": float(ok.mean()) if len(ok) else float("nan"),
                "coverage_stderr": float(ok.std(ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else float("nan"),
                "selected_mean": float(np.mean([r["selected"] for r in rs])),
                "kl_final_mean": float(kl.mean()) if len(kl) else float("nan"),
            })
        return out

    def coverages(self, method, epsilon=None, delta=None, n_targets=None) -> np.ndarray:
        """Per-trial coverage (NaN where undefined), ordered by trial."""
        rs = [r for r in self.rows if r["method"] == method
              and (epsilon is None or math.isclose(r["epsilon"], epsilon))
              and (delta is None or math.isclose(r["delta"], delta))
              and (n_targets is None or r["n_targets"] == n_targets)]
        rs.sort(key=lambda r: r["trial"])
        return np.array([r["coverage"] for r in rs], dtype=float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[h]) for h in CSV_HEADER])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_json(self, path=None) -> str:
        cfg = dataclasses.asdict(self.config)
        doc = {"parameters": cfg, "alpha": self.config.alpha, "methods": list(self.methods),
               "trials": self.trials, "summary": self.summary(), "rows": self.rows, "errors": self.errors}
        text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, np.generic):
        return _jsonable(x.item())
    return x


def _rng(master, *path):
    return np.random.default_rng(np.random.SeedSequence([master, *path]))


def run_trial(config: ExperimentConfig, methods, trial: int):
    """All (epsilon, delta, target count, method) cells of one trial."""
    wseed = int(np.random.SeedSequence([config.seed, trial, 0]).generate_state(1)[0])
    world = generate_world(dataclasses.replace(config.world, seed=wseed))
    ls, traces = world.locations, world.traces
    users = traces.user_ids
    alpha = config.alpha
    rows, errors = [], []
    target_sets = {}
    for z in config.n_targets if config.targets is None else (len(config.targets),):
        if config.targets is not None:
            target_sets[z] = tuple(config.targets)
        else:
            trng = _rng(config.seed, trial, 1, z)
            target_sets[z] = tuple(sorted(trng.choice(len(ls), size=z, replace=False).tolist()))
    for ei, eps in enumerate(config.epsilons):
        for di, delta in enumerate(config.deltas):
            for z, targets in target_sets.items():
                for mi, method in enumerate(METHODS):
                    if method not in methods:
                        continue
                    rng = _rng(config.seed, trial, 2, ei, di, z, mi)
                    clients = build_clients(traces, config.profiler)
                    kl = float("nan")
                    try:
                        if method == "ours":
                            res = run_selection(clients, ls, targets, eps, delta, config.k, alpha, config.rho, rng,
                                                pi_true=world.pi_true)
                            sel, kl = res.selected, kl_divergence(res.pi_hat, world.pi_true)
                        elif method == "laplace":
                            res = run_laplace_selection(clients, ls, targets, eps, delta, config.k, alpha, rng,
                                                        pi_true=world.pi_true)
                            sel, kl = res.selected, kl_divergence(res.pi_hat, world.pi_true)
                        elif method == "no":
                            sel = run_baseline_no(clients, delta, targets, alpha, rng)
                        else:
                            sel = run_baseline_random(users, alpha, rng)
                        cov = evaluate_coverage(sel, traces, targets) if sel else float("nan")
                    except Exception as exc:  # recorded, the experiment goes on
                        log.warning("trial %d %s failed: %s", trial, method, exc)
                        errors.append({"trial": trial, "method": method, "epsilon": eps, "delta": delta,
                                       "n_targets": z, "error": f"{type(exc).__name__}: {exc}"})
                        sel, cov = [], float("nan")
                    rows.append({"method": method, "epsilon": float(eps), "delta": float(delta), "n_targets": z,
                                 "trial": trial, "coverage": cov, "selected": len(sel), "kl_final": kl})
    return rows, errors


def run_experiment(config: ExperimentConfig, methods=METHODS, trials: int = 50, workers: int = 1) -> ExperimentReport:
    if trials < 1:
        raise ValueError("need at least one trial")
    unknown = set(methods) - set(METHODS)
    methods = tuple(m for m in METHODS if m in set(methods))
    if not methods or unknown:
        raise ValueError(f"methods must be a non-empty subset of {METHODS}")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run_trial, [config] * trials, [methods] * trials, range(trials)))
    else:
        results = [run_trial(config, methods, t) for t in range(trials)]
    rows = [r for rs, _ in results for r in rs]
    errors = [e for _, es in results for e in es]
    return ExperimentReport(config, methods, trials, rows, errors)
