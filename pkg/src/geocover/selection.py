"""Grouped user selection with iterative Bayesian estimation of the prior."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from geocover.locations import LocationSet
from geocover.mobility import MobilityProfile, pick_frequent_location
from geocover.privacy import (
    DegenerateObservation,
    ObfuscationPolicy,
    coverage_score,
    laplace_policy,
    obfuscate,
    posterior,
    uniform_prior,
)
from geocover.synthesis import (
    SynthesisConfig,
    SynthesisInfeasible,
    beta_from_binomial,
    max_feasible_beta,
    synthesize,
)

DEFAULT_K = 6


class MobileClient:
    """Client-side holder of a private mobility profile.

    The server only ever sees the return value of :meth:`report`.
    """

    def __init__(self, user, profile: MobilityProfile):
        self.user = user
        self._profile = profile
        self.queries = 0

    def report(self, policy: Optional[ObfuscationPolicy], delta: float, rng) -> Optional[int]:
        """One frequent location, obfuscated by ``policy`` (raw if ``None``)."""
        self.queries += 1
        loc = pick_frequent_location(self._profile, delta, rng)
        if loc is None or policy is None:
            return loc
        return obfuscate(policy, loc, rng)


@dataclass
class GroupStats:
    size: int
    report_location: int
    beta: Optional[float]
    objective: Optional[float]
    n_null: int
    n_match: int
    kl: Optional[float] = None

    @property
    def null_fraction(self):
        return self.n_null / self.size if self.size else 0.0


@dataclass
class SelectionResult:
    selected: list
    pi_hat: np.ndarray
    groups: list
    scan: list = field(default_factory=list)  # (group index, user) in scan order
    kl_initial: Optional[float] = None

    @property
    def kl_trajectory(self):
        return [self.kl_initial] + [g.kl for g in self.groups]


def split_groups(user_ids, k: int, rng) -> list:
    """Random partition into ``k`` groups whose sizes differ by at most one."""
    user_ids = list(user_ids)
    if k < 1 or k > len(user_ids):
        raise ValueError(f"need 1 <= k <= number of users, got k={k}, users={len(user_ids)}")
    perm = rng.permutation(len(user_ids))
    return [[user_ids[i] for i in part] for part in np.array_split(perm, k)]


def bayes_update(pi, policy: ObfuscationPolicy, observed: int) -> np.ndarray:
    return posterior(pi, policy, observed)


def group_update(pi, policy: ObfuscationPolicy, reports) -> np.ndarray:
    """Mean posterior over the group's non-NULL reports; unchanged if none."""
    posts = []
    for rep in reports:
        if rep is None:
            continue
        try:
            posts.append(bayes_update(pi, policy, rep))
        except DegenerateObservation as exc:
            warnings.warn(f"skipping report: {exc}", RuntimeWarning, stacklevel=2)
    if not posts:
        return np.asarray(pi, dtype=float).copy()
    out = np.mean(posts, axis=0)
    return out / out.sum()


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; +inf when p is not absolutely continuous w.r.t. q."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = p > 0
    if np.any(q[m] <= 0):
        warnings.warn("KL undefined: q vanishes where p is positive", RuntimeWarning, stacklevel=2)
        return math.inf
    return float(max(0.0, np.sum(p[m] * np.log(p[m] / q[m]))))


def adjust_beta_for_null(n_users: int, null_fraction: float, alpha: int, rho: float) -> float:
    """Binomial beta on the users expected to report something at all."""
    if not 0 <= null_fraction < 1:
        raise ValueError("null fraction must lie in [0, 1)")
    n_eff = int(round(n_users * (1.0 - null_fraction)))
    if n_eff < alpha:
        raise SynthesisInfeasible(f"only ~{n_eff} reporting users for alpha={alpha}")
    return beta_from_binomial(n_eff, alpha, rho)


# a chooser maps (pi_hat, remaining users, still needed, null estimate, previous beta)
# to (policy, report location, beta, objective)
Chooser = Callable[[np.ndarray, int, int, float, Optional[float]], tuple]


def _grouped_run(clients, n_locations, k, alpha, delta, rng, choose: Chooser,
                 prior=None, pi_true=None) -> SelectionResult:
    by_user = {c.user: c for c in clients}
    if len(by_user) != len(clients):
        raise ValueError("duplicate client users")
    groups = split_groups(list(by_user), k, rng)
    pi_hat = uniform_prior(n_locations) if prior is None else np.asarray(prior, dtype=float).copy()
    kl0 = kl_divergence(pi_hat, pi_true) if pi_true is not None else None
    stats, reports_by_group = [], []
    found = seen = nulls = 0
    remaining = len(clients)
    beta_prev = None
    for members in groups:
        nf = nulls / seen if seen else 0.0
        policy, rloc, beta, obj = choose(pi_hat, remaining, alpha - found, nf, beta_prev)
        reports = {u: by_user[u].report(policy, delta, rng) for u in members}
        n_null = sum(r is None for r in reports.values())
        n_match = sum(r == rloc for r in reports.values())
        pi_hat = group_update(pi_hat, policy, reports.values())
        kl = kl_divergence(pi_hat, pi_true) if pi_true is not None else None
        stats.append(GroupStats(len(members), rloc, beta, obj, n_null, n_match, kl))
        reports_by_group.append(reports)
        found += n_match
        seen += len(members)
        nulls += n_null
        remaining -= len(members)
        beta_prev = beta
    selected, scan = [], []
    for j in range(k - 1, -1, -1):
        if len(selected) >= alpha:
            break
        for u, rep in reports_by_group[j].items():
            scan.append((j, u))
            if rep is not None and rep == stats[j].report_location:
                selected.append(u)
                if len(selected) == alpha:
                    break
    return SelectionResult(selected, pi_hat, stats, scan, kl0)


def run_selection(clients, ls: LocationSet, targets, epsilon: float, delta: float, k: int, alpha: int,
                  rho: float, rng, prior=None, pi_true=None, report_location: int = 0,
                  formulation: str = "reduced") -> SelectionResult:
    """Group-by-group synthesis, upload and prior refinement, then biased selection.

    Each group gets a policy synthesized for the current prior estimate. Its
    beta is set so that the users not yet asked can still supply the
    selections that are missing with probability ``rho``, after discounting
    the NULL rate seen so far.
    """
    targets = tuple(targets)

    def choose(pi_hat, remaining, needed, nf, beta_prev):
        if needed >= 1:
            n_eff = int(round(remaining * (1.0 - nf)))
            if n_eff >= needed:
                beta = adjust_beta_for_null(remaining, nf, needed, rho)
            elif n_eff >= 1:
                beta = beta_from_binomial(n_eff, n_eff, rho)  # best effort: ask for everyone left
            else:
                beta = beta_prev if beta_prev is not None else beta_from_binomial(remaining, 1, rho)
        else:
            beta = beta_prev if beta_prev is not None else beta_from_binomial(remaining, 1, rho)
        cfg = SynthesisConfig(epsilon, targets, n_users=len(clients), alpha=alpha, rho=rho,
                              report_location=report_location, beta=beta, formulation=formulation)
        try:
            res = synthesize(pi_hat, cfg, ls)
        except SynthesisInfeasible:
            cap = max_feasible_beta(pi_hat, ls, epsilon)
            if beta <= cap * (1 - 1e-6):
                raise
            cfg.beta = cap * (1 - 1e-6)
            res = synthesize(pi_hat, cfg, ls)
        return res.policy, res.report_location, res.beta, res.objective

    return _grouped_run(clients, len(ls), k, alpha, delta, rng, choose, prior, pi_true)


def run_laplace_selection(clients, ls: LocationSet, targets, epsilon: float, delta: float, k: int,
                          alpha: int, rng, prior=None, pi_true=None, kernel_scale: float = 0.5) -> SelectionResult:
    """Same pipeline with a fixed Laplace policy; each group's report location
    is the column with the best coverage score under the current estimate."""
    policy = laplace_policy(ls, epsilon, kernel_scale)
    targets = tuple(targets)

    def choose(pi_hat, remaining, needed, nf, beta_prev):
        scores = [coverage_score(pi_hat, policy, j, targets) for j in range(len(ls))]
        j = int(np.argmax(scores))
        beta = float(pi_hat @ policy.matrix[:, j])
        return policy, j, beta, scores[j]

    return _grouped_run(clients, len(ls), k, alpha, delta, rng, choose, prior, pi_true)
