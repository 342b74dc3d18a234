"""Dense two-phase primal simplex.

Solves ``max c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi``.
Pivoting is deterministic: largest reduced cost by default, falling back to
Bland's rule while the method is stalling on degenerate pivots, or Bland's
rule throughout with ``pivot="bland"``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg.blas import dger

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_EPS = 1e-11
_DEGENERATE_RUN = 50


class LPNumericalError(RuntimeError):
    def __init__(self, msg, **diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    lo: Optional[np.ndarray] = None  # default 0
    hi: Optional[np.ndarray] = None  # default +inf
    names: Optional[list] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = len(self.c)

        def mat(A, b, what):
            if A is None and b is None:
                return np.zeros((0, n)), np.zeros(0)
            if A is None or b is None:
                raise ValueError(f"{what}: matrix and right-hand side must be given together")
            A = np.asarray(A, dtype=float)
            b = np.asarray(b, dtype=float).ravel()
            if A.size == 0 and len(b) == 0:
                return np.zeros((0, n)), b
            if A.ndim != 2 or A.shape != (len(b), n):
                raise ValueError(f"{what}: expected shape ({len(b)}, {n}), got {A.shape}")
            return A, b

        self.A_ub, self.b_ub = mat(self.A_ub, self.b_ub, "A_ub")
        self.A_eq, self.b_eq = mat(self.A_eq, self.b_eq, "A_eq")
        self.lo = np.zeros(n) if self.lo is None else np.broadcast_to(np.asarray(self.lo, float), (n,)).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.broadcast_to(np.asarray(self.hi, float), (n,)).copy()
        for arr, what in [(self.c, "c"), (self.A_ub, "A_ub"), (self.b_ub, "b_ub"),
                          (self.A_eq, "A_eq"), (self.b_eq, "b_eq")]:
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{what} has non-finite entries")
        if np.any(self.lo == np.inf) or np.any(self.hi == -np.inf) or np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)):
            raise ValueError("invalid variable bounds")

    @property
    def n_vars(self):
        return len(self.c)

    def dump(self, fh=None) -> str:
        """Plain-text rendering in an LP-file-like layout, for debugging."""
        out = io.StringIO()
        names = self.names or [f"x{j}" for j in range(self.n_vars)]

        def expr(row):
            terms = [f"{v:+.17g} {names[j]}" for j, v in enumerate(row) if v != 0]
            return " ".join(terms) if terms else "0"

        out.write("maximize\n  obj: " + expr(self.c) + "\nsubject to\n")
        for i, (row, b) in enumerate(zip(self.A_ub, self.b_ub)):
            out.write(f"  u{i}: {expr(row)} <= {b:.17g}\n")
        for i, (row, b) in enumerate(zip(self.A_eq, self.b_eq)):
            out.write(f"  e{i}: {expr(row)} = {b:.17g}\n")
        out.write("bounds\n")
        for j in range(self.n_vars):
            out.write(f"  {self.lo[j]:.17g} <= {names[j]} <= {self.hi[j]:.17g}\n")
        out.write("end\n")
        text = out.getvalue()
        if fh is not None:
            fh.write(text)
        return text


@dataclass
class LPSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective_value: float = float("nan")
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL


def _standardize(lp: LinearProgram):
    """Rewrite as z >= 0 with x = shift + T z; returns row blocks in z."""
    n = lp.n_vars
    cols = []  # (var, sign)
    shift = np.zeros(n)
    extra_rows = []  # (z index, upper bound)
    for j in range(n):
        lo, hi = lp.lo[j], lp.hi[j]
        if np.isfinite(lo):
            shift[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                if hi < lo:
                    return None
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    T = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        T[j, k] = s
    A_ub = lp.A_ub @ T
    b_ub = lp.b_ub - lp.A_ub @ shift
    if extra_rows:
        B = np.zeros((len(extra_rows), len(cols)))
        for r, (k, ub) in enumerate(extra_rows):
            B[r, k] = 1.0
        A_ub = np.vstack([A_ub, B])
        b_ub = np.concatenate([b_ub, [ub for _, ub in extra_rows]])
    A_eq = lp.A_eq @ T
    b_eq = lp.b_eq - lp.A_eq @ shift
    c = lp.c @ T
    return T, shift, c, A_ub, b_ub, A_eq, b_eq


class _Tableau:
    def __init__(self, M, rhs, basis, pivot_rule, max_iter):
        self.M = M  # rows x cols, constraint body
        self.rhs = rhs
        self.basis = basis
        self.pivot_rule = pivot_rule
        self.max_iter = max_iter
        self.iterations = 0

    def set_objective(self, cost):
        obj = cost.astype(float).copy()
        val = 0.0
        cb = cost[self.basis]
        nz = np.nonzero(cb)[0]
        if len(nz):
            obj -= cb[nz] @ self.M[nz]
            val -= cb[nz] @ self.rhs[nz]
        self.obj = obj
        self.obj_val = val  # equals -(objective at current basis)

    def pivot(self, r, c):
        M, rhs = self.M, self.rhs
        p = M[r, c]
        row = M[r] / p
        rhs_r = rhs[r] / p
        col = M[:, c].copy()
        col[r] = 0.0
        # in-place rank-one update; M is Fortran-ordered for BLAS
        self.M = M = dger(-1.0, col, row, a=M, overwrite_a=1)
        M[r] = row
        M[:, c] = 0.0
        M[r, c] = 1.0
        rhs -= col * rhs_r
        rhs[r] = rhs_r
        oc = self.obj[c]
        if oc != 0:
            self.obj -= oc * row
            self.obj_val -= oc * rhs_r
            self.obj[c] = 0.0
        self.basis[r] = c

    def run(self, allowed, opt_tol):
        """Iterate until optimal or unbounded; returns status."""
        bland = self.pivot_rule == "bland"
        degenerate = 0
        while True:
            red = np.where(allowed, self.obj, 0.0)
            candidates = np.nonzero(red > opt_tol)[0]
            if len(candidates) == 0:
                return OPTIMAL
            if self.iterations >= self.max_iter:
                raise LPNumericalError(
                    "simplex iteration cap exceeded",
                    iterations=self.iterations,
                    max_reduced_cost=float(red.max()),
                    rows=self.M.shape[0],
                    cols=self.M.shape[1],
                )
            use_bland = bland or degenerate >= _DEGENERATE_RUN
            c = candidates[0] if use_bland else candidates[np.argmax(red[candidates])]
            col = self.M[:, c]
            rows = np.nonzero(col > _PIVOT_EPS)[0]
            if len(rows) == 0:
                return UNBOUNDED
            ratios = self.rhs[rows] / col[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            if len(ties) > 1:
                if use_bland:
                    r = ties[np.argmin(self.basis[ties])]
                else:
                    # largest pivot element among ties for stability
                    r = ties[np.argmax(col[ties])]
            else:
                r = ties[0]
            degenerate = degenerate + 1 if best <= 1e-12 else 0
            self.pivot(r, c)
            self.iterations += 1


def solve(lp: LinearProgram, tol: float = 1e-9, pivot: str = "dantzig", max_iter: Optional[int] = None) -> LPSolution:
    if pivot not in ("dantzig", "bland"):
        raise ValueError(f"unknown pivot rule {pivot!r}")
    std = _standardize(lp)
    if std is None:
        return LPSolution(INFEASIBLE)
    T, shift, c, A_ub, b_ub, A_eq, b_eq = std
    nz = T.shape[1]
    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq

    # equilibrate rows
    A = np.vstack([A_ub, A_eq]) if m else np.zeros((0, nz))
    b = np.concatenate([b_ub, b_eq])
    scale = np.abs(A).max(axis=1) if m else np.zeros(0)
    scale[scale == 0] = 1.0
    A = A / scale[:, None]
    b = b / scale

    # body columns: z | slacks | artificials
    n_cols = nz + m_ub
    body = np.zeros((m, n_cols))
    body[:, :nz] = A
    body[np.arange(m_ub), nz + np.arange(m_ub)] = 1.0
    rhs = b.copy()
    neg = rhs < 0
    body[neg] *= -1.0
    rhs[neg] *= -1.0

    basis = np.empty(m, dtype=int)
    needs_art = np.ones(m, dtype=bool)
    needs_art[:m_ub] = neg[:m_ub]
    basis[~needs_art] = nz + np.nonzero(~needs_art)[0]
    art_rows = np.nonzero(needs_art)[0]
    n_art = len(art_rows)
    M = np.zeros((m, n_cols + n_art), order="F")
    M[:, :n_cols] = body
    M[art_rows, n_cols + np.arange(n_art)] = 1.0
    basis[art_rows] = n_cols + np.arange(n_art)

    if max_iter is None:
        max_iter = 50 * (m + n_cols + 10)
    tab = _Tableau(M, rhs, basis, pivot, max_iter)
    opt_tol = 1e-10

    if n_art:
        cost1 = np.zeros(n_cols + n_art)
        cost1[n_cols:] = -1.0
        tab.set_objective(cost1)
        allowed = np.ones(n_cols + n_art, dtype=bool)
        tab.run(allowed, opt_tol)
        infeas = tab.obj_val  # sum of artificials at the phase-one optimum
        feas_tol = max(tol, 1e-9) * max(1.0, np.abs(rhs).max(initial=0.0))
        if infeas > feas_tol or np.any(tab.rhs[tab.basis >= n_cols] > feas_tol):
            return LPSolution(INFEASIBLE, iterations=tab.iterations, info={"phase1_residual": float(infeas)})
        # drive artificials out of the basis, drop redundant rows
        keep = np.ones(m, dtype=bool)
        for r in np.nonzero(tab.basis >= n_cols)[0]:
            row = np.abs(tab.M[r, :n_cols])
            j = int(np.argmax(row))
            if row[j] > 1e-9:
                tab.pivot(r, j)
            else:
                keep[r] = False
        tab.M = np.asfortranarray(tab.M[keep][:, :n_cols])
        tab.rhs = tab.rhs[keep]
        tab.basis = tab.basis[keep]
        body = body[keep]
        b_keep = np.where(neg, -b, b)[keep]
    else:
        b_keep = np.where(neg, -b, b)

    cost2 = np.zeros(n_cols)
    cost2[:nz] = c
    tab.set_objective(cost2)
    status = tab.run(np.ones(n_cols, dtype=bool), opt_tol)
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, iterations=tab.iterations)

    # recompute basic values from the original rows for accuracy
    B = body[:, tab.basis]
    try:
        xb = np.linalg.solve(B, b_keep)
        xb += np.linalg.solve(B, b_keep - B @ xb)
    except np.linalg.LinAlgError:
        xb = tab.rhs.copy()
    xb[(xb < 0) & (xb > -tol)] = 0.0
    full = np.zeros(n_cols)
    full[tab.basis] = xb
    x = shift + T @ full[:nz]
    sol = LPSolution(OPTIMAL, x=x, objective_value=float(lp.c @ x), iterations=tab.iterations)
    res = residuals(lp, x)
    sol.info["residuals"] = res
    if max(res.values()) > tol:
        raise LPNumericalError("optimal basis violates feasibility tolerance", residuals=res, iterations=tab.iterations)
    return sol


def residuals(lp: LinearProgram, x) -> dict:
    x = np.asarray(x, float)
    ub = float(np.max(lp.A_ub @ x - lp.b_ub, initial=0.0))
    eq = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq), initial=0.0))
    bd = float(max(np.max(lp.lo - x, initial=0.0), np.max(x - lp.hi, initial=0.0)))
    return {"ub": max(ub, 0.0), "eq": eq, "bounds": max(bd, 0.0)}
