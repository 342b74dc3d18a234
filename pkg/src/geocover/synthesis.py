"""Coverage-optimal DP policy synthesis (binomial choice of beta + one LP solve)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from geocover import lp as lpmod
from geocover.locations import LocationSet, essential_pairs
from geocover.privacy import ObfuscationPolicy, check_prior, verify_geo_dp

DEFAULT_RHO = 0.95
DEFAULT_P_MIN = 1e-9
BETA_FLOOR = 1e-12


class SynthesisInfeasible(RuntimeError):
    def __init__(self, msg, beta=None):
        super().__init__(msg)
        self.beta = beta


@dataclass
class SynthesisConfig:
    epsilon: float
    targets: tuple
    n_users: int
    alpha: int
    rho: float = DEFAULT_RHO
    report_location: int = 0
    p_min: float = DEFAULT_P_MIN
    beta: Optional[float] = None  # overrides the binomial rule when set
    formulation: str = "reduced"  # or "full"
    completion: str = "peaked"  # how the reduced form fills non-report columns

    def __post_init__(self):
        self.targets = tuple(sorted(set(int(t) for t in self.targets)))
        if not self.targets:
            raise ValueError("targets must be non-empty")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.alpha <= self.n_users:
            raise ValueError(f"need 0 < alpha <= n_users, got alpha={self.alpha}, n_users={self.n_users}")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.formulation not in ("reduced", "full"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.completion not in ("peaked", "laplace", "uniform"):
            raise ValueError(f"unknown completion {self.completion!r}")
        if self.beta is not None and not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")


@dataclass
class SynthesisResult:
    policy: ObfuscationPolicy
    report_location: int
    beta: float
    objective: float
    info: dict = field(default_factory=dict)


@lru_cache(maxsize=64)
def _log_binom_coeffs(n: int) -> np.ndarray:
    logfact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, n + 1)))])
    return logfact[n] - logfact - logfact[::-1]


def binomial_tail(n: int, k: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(n, p), summed in log space."""
    if k <= 0:
        return 1.0
    if k > n or p <= 0:
        return 0.0
    if p >= 1:
        return 1.0
    m = np.arange(k, n + 1)
    logt = _log_binom_coeffs(n)[k:] + m * math.log(p) + (n - m) * math.log1p(-p)
    top = logt.max()
    return float(min(1.0, math.exp(top) * np.exp(logt - top).sum()))


def beta_from_binomial(n_users: int, alpha: int, rho: float, tol: float = 1e-13) -> float:
    """Smallest beta with P(Binomial(n_users, beta) >= alpha) >= rho."""
    if not 1 <= alpha <= n_users:
        raise ValueError(f"need 1 <= alpha <= n_users, got alpha={alpha}, n_users={n_users}")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    lo, hi = BETA_FLOOR, 1.0
    if binomial_tail(n_users, alpha, hi) < rho:
        raise SynthesisInfeasible("no beta reaches the requested selection probability", beta=1.0)
    if binomial_tail(n_users, alpha, lo) >= rho:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binomial_tail(n_users, alpha, mid) >= rho:
            hi = mid
        else:
            lo = mid
    return hi


def _var(n, l, j):
    return l * n + j


def build_mlcp_lp(pi, config: SynthesisConfig, beta: float, ls: LocationSet) -> lpmod.LinearProgram:
    """Full LP over all n^2 policy entries ``P[l, j]`` (row-major variables)."""
    n = len(ls)
    pi = check_prior(pi, n)
    r = ls.check_id(config.report_location)
    c = np.zeros(n * n)
    for t in config.targets:
        c[_var(n, t, r)] = pi[t] / beta
    E = np.exp(config.epsilon * ls.dist)
    a_idx, b_idx = np.nonzero(~np.eye(n, dtype=bool))
    n_pairs = len(a_idx)
    A_ub = np.zeros((n * n_pairs, n * n))
    rows = np.arange(n * n_pairs)
    j_of = np.repeat(np.arange(n), n_pairs)
    a_of = np.tile(a_idx, n)
    b_of = np.tile(b_idx, n)
    A_ub[rows, a_of * n + j_of] = 1.0
    A_ub[rows, b_of * n + j_of] = -E[a_of, b_of]
    b_ub = np.zeros(len(rows))
    A_eq = np.zeros((n + 1, n * n))
    for l in range(n):
        A_eq[l, l * n:(l + 1) * n] = 1.0
    A_eq[n, np.arange(n) * n + r] = pi
    b_eq = np.concatenate([np.ones(n), [beta]])
    names = [f"P_{l}_{j}" for l in range(n) for j in range(n)]
    return lpmod.LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lo=np.full(n * n, config.p_min), names=names)


def build_reduced_lp(pi, config: SynthesisConfig, beta: float, ls: LocationSet) -> lpmod.LinearProgram:
    """LP over the report column ``x = P[:, l*]`` only.

    Averaging all other columns of any feasible policy gives a feasible policy
    with the same objective whose remaining columns all equal
    ``(1 - x) / (n - 1)``. So it suffices that ``x`` and ``1 - x`` are both
    DP-feasible, with the positivity floor applied to both.
    """
    n = len(ls)
    pi = check_prior(pi, n)
    c = np.zeros(n)
    t = np.asarray(config.targets)
    c[t] = pi[t] / beta
    pairs = essential_pairs(ls)
    a, b = pairs[:, 0], pairs[:, 1]
    E = np.exp(config.epsilon * ls.dist[a, b])
    k = len(pairs)
    A_ub = np.zeros((2 * k, n))
    A_ub[np.arange(k), a] = 1.0
    A_ub[np.arange(k), b] = -E
    A_ub[k + np.arange(k), a] = -1.0
    A_ub[k + np.arange(k), b] = E
    b_ub = np.concatenate([np.zeros(k), E - 1.0])
    return lpmod.LinearProgram(
        c, A_ub, b_ub, pi[None, :], np.array([beta]),
        lo=np.full(n, config.p_min), hi=np.full(n, 1.0 - (n - 1) * config.p_min),
        names=[f"x_{l}" for l in range(n)],
    )


def _peaked_completion(u, ls: LocationSet, epsilon: float, others, p_min: float):
    """Split ``u = 1 - x`` into exponential columns ``g_j exp(-eps d(., j))``
    plus an evenly shared DP-feasible remainder, maximizing ``sum g``."""
    n = len(ls)
    K = np.exp(-epsilon * ls.dist[:, others])
    pairs = essential_pairs(ls)
    a, b = pairs[:, 0], pairs[:, 1]
    E = np.exp(epsilon * ls.dist[a, b])[:, None]
    A_ub = np.vstack([K, -K[a] + E * K[b]])
    b_ub = np.concatenate([u - (n - 1) * p_min, E[:, 0] * u[b] - u[a]])
    sol = lpmod.solve(lpmod.LinearProgram(np.ones(len(others)), A_ub, b_ub))
    if sol.status != lpmod.OPTIMAL:
        return None
    g = sol.x
    rest = u - K @ g
    return g[None, :] * K + (rest / (n - 1))[:, None]


def complete_policy(x, ls: LocationSet, epsilon: float, report_location: int, mode: str = "peaked",
                    p_min: float = DEFAULT_P_MIN) -> np.ndarray:
    """Fill the non-report columns so that each row sums to one.

    ``uniform`` splits ``1 - x`` evenly. ``laplace`` spends whatever budget
    the complement leaves unused on a Laplace kernel. ``peaked`` puts as much
    of the complement as possible into full-budget exponential columns
    centred on each location, so reports other than ``l*`` stay informative
    about the true location. Modes fall back to the next simpler one if the
    result does not pass the DP check.
    """
    n = len(ls)
    x = np.asarray(x, float)
    u = 1.0 - x
    others = np.array([j for j in range(n) if j != report_location])
    P = np.empty((n, n))
    P[:, report_location] = x
    order = {"peaked": ["peaked", "laplace", "uniform"], "laplace": ["laplace", "uniform"]}.get(mode, ["uniform"])
    for m in order:
        if m == "peaked" and n > 2:
            cols = _peaked_completion(u, ls, epsilon, others, p_min)
            if cols is None:
                continue
            P[:, others] = cols
        elif m == "laplace" and n > 2:
            off = ~np.eye(n, dtype=bool)
            lu = np.log(u)
            used = (np.abs(lu[:, None] - lu[None, :])[off] / ls.dist[off]).max()
            spare = max(epsilon - used, 0.0) * (1.0 - 1e-9)
            K = np.exp(-0.5 * spare * ls.dist[:, others])
            P[:, others] = u[:, None] * K / K.sum(axis=1, keepdims=True)
        else:
            P[:, others] = (u / (n - 1))[:, None]
            return P
        if _column_violation(P, ls, epsilon) <= 1e-10 and P.min() >= p_min * (1 - 1e-9):
            return P
    return P


def _column_violation(P, ls: LocationSet, epsilon: float) -> float:
    E = np.exp(epsilon * ls.dist)
    Pt = P.T
    return float((Pt[:, :, None] / (E[None] * Pt[:, None, :])).max() - 1.0)


def _solve(pi, config: SynthesisConfig, beta: float, ls: LocationSet):
    n = len(ls)
    r = ls.check_id(config.report_location)
    build_full = config.formulation == "full"
    lp = build_mlcp_lp(pi, config, beta, ls) if build_full else build_reduced_lp(pi, config, beta, ls)
    sol = lpmod.solve(lp)
    if sol.status != lpmod.OPTIMAL:
        raise SynthesisInfeasible(f"policy LP is {sol.status} at beta={beta:.6g}", beta=beta)
    if build_full:
        P = sol.x.reshape(n, n)
    else:
        P = complete_policy(sol.x, ls, config.epsilon, r, config.completion, config.p_min)
    P = dp_closure(P, ls, config.epsilon)
    return P / P.sum(axis=1, keepdims=True), sol


def dp_closure(P, ls: LocationSet, epsilon: float) -> np.ndarray:
    """``P'[a, j] = min_c exp(eps d(a, c)) P[c, j]``.

    Exactly DP by the triangle inequality and never above ``P``. Removes
    round-off violations on entries near the positivity floor, where an
    absolute LP error of 1e-16 is already a large relative one.
    """
    E = np.exp(epsilon * ls.dist)
    return (E[:, :, None] * P[None, :, :]).min(axis=1)


def synthesize(pi, config: SynthesisConfig, ls: LocationSet, verify_tol: float = 1e-8) -> SynthesisResult:
    """Optimal policy and report location for covering ``config.targets``."""
    n = len(ls)
    pi = check_prior(pi, n)
    for t in config.targets:
        ls.check_id(t)
    r = ls.check_id(config.report_location)
    beta = config.beta if config.beta is not None else beta_from_binomial(config.n_users, config.alpha, config.rho)
    if n == 1:
        policy = ObfuscationPolicy(np.ones((1, 1)), config.epsilon, ls)
        return SynthesisResult(policy, r, beta, 1.0)
    P, sol = _solve(pi, config, beta, ls)
    policy = ObfuscationPolicy(P, config.epsilon, ls)
    report = verify_geo_dp(policy, tol=verify_tol)
    if not report.certified:
        raise lpmod.LPNumericalError("synthesized policy fails the DP check", report=report)
    t = np.asarray(config.targets)
    objective = float(pi[t] @ P[t, r] / beta)
    return SynthesisResult(policy, r, beta, objective,
                           info={"lp_iterations": sol.iterations, "dp_report": report,
                                 "lp_objective": sol.objective_value})


def max_feasible_beta(pi, ls: LocationSet, epsilon: float, p_min: float = DEFAULT_P_MIN) -> float:
    """Largest report probability ``sum_l pi_l P[l, l*]`` any eps-DP policy allows."""
    n = len(ls)
    pi = check_prior(pi, n)
    if n == 1:
        return 1.0
    cfg = SynthesisConfig(epsilon, (0,), 1, 1, p_min=p_min)
    lp = build_reduced_lp(pi, cfg, 1.0, ls)
    lp = lpmod.LinearProgram(pi, lp.A_ub, lp.b_ub, lo=lp.lo, hi=lp.hi)
    sol = lpmod.solve(lp)
    return float(sol.objective_value)


def beta_sweep(pi, config: SynthesisConfig, betas, ls: LocationSet) -> list:
    """Objective for each beta; infeasible entries carry ``None``."""
    out = []
    for b in betas:
        cfg = SynthesisConfig(**{**config.__dict__, "beta": float(b)})
        try:
            res = synthesize(pi, cfg, ls)
            out.append((float(b), res.objective))
        except SynthesisInfeasible:
            out.append((float(b), None))
    return out
