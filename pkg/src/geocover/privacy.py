"""Obfuscation policies, geographic DP verification, posteriors and coverage bounds.

A policy is a row-stochastic matrix ``P[l, l*]`` giving the probability of
reporting ``l*`` when the true frequent location is ``l``. Geographic
epsilon-DP requires ``P[a, j] <= exp(eps * d(a, b)) * P[b, j]`` for every
``a, b, j``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from geocover.locations import LocationSet

ROW_SUM_TOL = 1e-9
EXHAUSTIVE_LIMIT = 64


class DegenerateObservation(ValueError):
    """The observed report has zero probability under the prior and policy."""


class InfeasibleTheta(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ObfuscationPolicy:
    matrix: np.ndarray
    epsilon: float
    location_set: Optional[LocationSet] = None

    def __post_init__(self):
        P = np.array(self.matrix, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"policy must be square, got shape {P.shape}")
        if self.location_set is not None and P.shape[0] != len(self.location_set):
            raise ValueError("policy size does not match the location set")
        if not np.all(np.isfinite(P)) or np.any(P <= 0):
            raise ValueError("policy entries must be finite and strictly positive")
        dev = np.abs(P.sum(axis=1) - 1.0).max()
        if dev > ROW_SUM_TOL:
            raise ValueError(f"policy rows must sum to 1 (max deviation {dev:.3g})")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n(self):
        return self.matrix.shape[0]

    def to_json(self, path=None, **extra) -> str:
        doc = {"epsilon": self.epsilon, "locations": self.n, "rows": self.matrix.tolist()}
        doc.update(extra)
        text = json.dumps(doc)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source, location_set=None) -> "ObfuscationPolicy":
        text = Path(source).read_text(encoding="utf-8") if not str(source).lstrip().startswith("{") else source
        doc = json.loads(text)
        rows = np.array(doc["rows"], dtype=float)
        if rows.shape != (doc["locations"], doc["locations"]):
            raise ValueError(f"rows shape {rows.shape} does not match locations={doc['locations']}")
        return cls(rows, doc["epsilon"], location_set)


@dataclass(frozen=True)
class DPReport:
    max_violation: float
    worst_triple: tuple  # (l1, l2, l*)
    tol: float
    triples_checked: int
    exhaustive: bool

    @property
    def certified(self) -> bool:
        return self.max_violation <= self.tol


def check_prior(pi, n=None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float).ravel()
    if n is not None and len(pi) != n:
        raise ValueError(f"prior has {len(pi)} entries, expected {n}")
    if np.any(pi < 0) or not np.all(np.isfinite(pi)):
        raise ValueError("prior entries must be finite and non-negative")
    if abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError(f"prior must sum to 1, sums to {pi.sum():.12g}")
    return pi


def uniform_prior(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _dist(policy: ObfuscationPolicy, ls: Optional[LocationSet]) -> np.ndarray:
    ls = ls if ls is not None else policy.location_set
    if ls is None:
        raise ValueError("a location set is required to evaluate distances")
    return ls.dist


def verify_geo_dp(policy: ObfuscationPolicy, epsilon: Optional[float] = None, tol: float = 1e-8,
                  ls: Optional[LocationSet] = None, n_samples: int = 10**6, rng=None) -> DPReport:
    """Largest relative violation ``P[a,j] / (exp(eps d(a,b)) P[b,j]) - 1``.

    Exhaustive over all n^3 triples below 64 locations; above that,
    ``n_samples`` uniformly random triples are checked.
    """
    eps = policy.epsilon if epsilon is None else float(epsilon)
    D = _dist(policy, ls)
    P = policy.matrix
    n = P.shape[0]
    with np.errstate(over="ignore"):
        E = np.exp(eps * D)
    if n < EXHAUSTIVE_LIMIT:
        # v[j, a, b] = P[a, j] / (E[a, b] P[b, j]) - 1
        Pt = P.T
        v = Pt[:, :, None] / (E[None, :, :] * Pt[:, None, :]) - 1.0
        j, a, b = np.unravel_index(int(np.argmax(v)), v.shape)
        return DPReport(float(v[j, a, b]), (int(a), int(b), int(j)), tol, n**3, True)
    rng = np.random.default_rng(0) if rng is None else rng
    a, b, j = rng.integers(0, n, size=(3, n_samples))
    v = P[a, j] / (E[a, b] * P[b, j]) - 1.0
    k = int(np.argmax(v))
    return DPReport(float(v[k]), (int(a[k]), int(b[k]), int(j[k])), tol, n_samples, False)


def posterior(pi, policy: ObfuscationPolicy, observed: int) -> np.ndarray:
    """Bayes posterior over true locations given one report."""
    pi = np.asarray(pi, dtype=float)
    lik = policy.matrix[:, observed]
    joint = pi * lik
    z = joint.sum()
    if not z > 0:
        raise DegenerateObservation(f"report {observed} has zero probability under the prior")
    return joint / z


def coverage_score(pi, policy: ObfuscationPolicy, observed: int, targets) -> float:
    """Posterior probability that a user reporting ``observed`` lives in ``targets``."""
    post = posterior(pi, policy, observed)
    return float(post[np.asarray(sorted(set(targets)), dtype=int)].sum())


def laplace_policy(ls: LocationSet, epsilon: float, kernel_scale: float = 0.5) -> ObfuscationPolicy:
    """Discretized Laplace mechanism, rows ``∝ exp(-kernel_scale * eps * d)``.

    With the default scale of one half, row normalization can cost at most
    another factor ``exp(eps d / 2)``, so the result satisfies eps-geo-DP.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    K = np.exp(-kernel_scale * epsilon * ls.dist)
    return ObfuscationPolicy(K / K.sum(axis=1, keepdims=True), epsilon, ls)


def obfuscate(policy: ObfuscationPolicy, actual: int, rng: np.random.Generator) -> int:
    cdf = np.cumsum(policy.matrix[actual])
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), policy.n - 1))


def obfuscate_many(policy: ObfuscationPolicy, actual, rng: np.random.Generator) -> np.ndarray:
    actual = np.asarray(actual, dtype=int)
    cdf = np.cumsum(policy.matrix, axis=1)
    u = rng.random(len(actual)) * cdf[actual, -1]
    out = (cdf[actual] <= u[:, None]).sum(axis=1)
    return np.minimum(out, policy.n - 1)


def slcp_upper_bound(pi, target: int, epsilon: float, ls: LocationSet) -> float:
    """Best achievable posterior of a single target: pi_t / sum_l pi_l exp(-eps d(l, t))."""
    pi = np.asarray(pi, dtype=float)
    if pi[target] <= 0:
        warnings.warn(f"prior mass at target {target} is zero; bound is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(pi[target] / (pi * np.exp(-epsilon * ls.dist[:, target])).sum())


def compute_tau(ls: LocationSet, target: int, epsilon: float) -> float:
    """Largest scale for the exponential report column that keeps the policy DP.

    Minimum over ordered pairs ``a != b`` of
    ``(e^{eps d(a,b)} - 1) / (e^{-eps (d(b,t) - d(a,b))} - e^{-eps d(a,t)})``;
    pairs with a non-positive denominator impose no constraint.
    """
    n = len(ls)
    if n == 1:
        return math.inf
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    D = ls.dist
    dt = D[:, target]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        num = np.expm1(epsilon * D)
        den = np.exp(-epsilon * (dt[None, :] - D)) - np.exp(-epsilon * dt)[:, None]
        ratio = np.where(den > 0, num / den, np.inf)
    np.fill_diagonal(ratio, np.inf)
    return float(ratio.min())


def slcp_analytic_policy(ls: LocationSet, target: int, epsilon: float, report_location: int,
                         theta: Optional[float] = None) -> ObfuscationPolicy:
    """Closed-form optimal single-target policy.

    Column ``report_location`` is ``theta * exp(-eps d(l, target))``; every
    other column takes an equal share of what is left of the row.
    """
    n = len(ls)
    ls.check_id(target)
    ls.check_id(report_location)
    if n == 1:
        return ObfuscationPolicy(np.ones((1, 1)), epsilon, ls)
    tau = compute_tau(ls, target, epsilon)
    if theta is None:
        theta = tau
    elif theta <= 0:
        raise ValueError(f"theta must be positive, got {theta}")
    elif theta > tau * (1 + 1e-12):
        raise InfeasibleTheta(f"theta={theta} exceeds the feasibility threshold tau={tau}")
    col = theta * np.exp(-epsilon * ls.dist[:, target])
    P = np.repeat(((1.0 - col) / (n - 1))[:, None], n, axis=1)
    P[:, report_location] = col
    return ObfuscationPolicy(P, epsilon, ls)


def _target_array(targets, n):
    t = np.array(sorted(set(int(x) for x in targets)), dtype=int)
    if len(t) == 0:
        raise ValueError("target set must be non-empty")
    if t[0] < 0 or t[-1] >= n:
        raise IndexError("target id out of range")
    return t


def mlcp_upper_bound(pi, targets, epsilon: float, ls: LocationSet) -> float:
    """Upper bound on the posterior mass of a target set for any eps-DP policy.

    Every non-target ``l`` must report the chosen location with probability at
    least ``C / sum_t pi_t exp(eps d(l,t))``, where ``C`` is the target mass
    reporting it; substituting gives
    ``1 / (1 + sum_{l not in T} pi_l / sum_{t in T} pi_t exp(eps d(l, t)))``.
    """
    pi = np.asarray(pi, dtype=float)
    t = _target_array(targets, len(pi))
    if np.any(pi[t] <= 0):
        raise ZeroDivisionError("prior must be positive on every target")
    rest = np.setdiff1d(np.arange(len(pi)), t)
    if len(rest) == 0:
        return 1.0
    with np.errstate(over="ignore"):
        w = (pi[t][None, :] * np.exp(epsilon * ls.dist[np.ix_(rest, t)])).sum(axis=1)
    return float(1.0 / (1.0 + (pi[rest] / w).sum()))


def mlcp_bound_feasible(ls: LocationSet, targets, tol: float = 1e-9) -> bool:
    """Necessary condition for the multi-target bound to be attainable.

    For each pair of targets, ``d(l, t1) - d(l, t2)`` must be the same for
    every non-target ``l``.
    """
    t = _target_array(targets, len(ls))
    if len(t) < 2:
        return True
    rest = np.setdiff1d(np.arange(len(ls)), t)
    if len(rest) < 2:
        return True
    D = ls.dist
    for i, t1 in enumerate(t):
        for t2 in t[i + 1:]:
            diff = D[rest, t1] - D[rest, t2]
            if diff.max() - diff.min() > tol:
                return False
    return True
