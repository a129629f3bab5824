"""
Dense two-phase primal simplex with Bland's rule.

Solves ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0``.  Sized for
the power-allocation programs of this package (a few hundred variables and a
few thousand rows); no sparsity, no warm starts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-10


def _as_matrix(a, cols, name):
    if a is None:
        return np.zeros((0, cols))
    m = np.array(a, dtype=float, ndmin=2)
    if m.size == 0:
        return np.zeros((0, cols))
    if m.shape[1] != cols:
        raise ContractError(f"{name} has {m.shape[1]} columns, expected {cols}")
    return m


def _as_vector(b, rows, name):
    if b is None:
        b = np.zeros(0)
    v = np.atleast_1d(np.array(b, dtype=float))
    if v.shape != (rows,):
        raise ContractError(f"{name} has shape {v.shape}, expected ({rows},)")
    return v


@dataclass(frozen=True)
class LpProblem:
    """``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``."""

    c: np.ndarray
    A_ub: np.ndarray = None
    b_ub: np.ndarray = None
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None

    def __post_init__(self):
        c = np.atleast_1d(np.array(self.c, dtype=float))
        if c.ndim != 1 or c.size < 1:
            raise ContractError("objective must be a non-empty vector")
        n = c.size
        A_ub = _as_matrix(self.A_ub, n, "A_ub")
        b_ub = _as_vector(self.b_ub, A_ub.shape[0], "b_ub")
        A_eq = _as_matrix(self.A_eq, n, "A_eq")
        b_eq = _as_vector(self.b_eq, A_eq.shape[0], "b_eq")
        for name, arr in (("c", c), ("A_ub", A_ub), ("b_ub", b_ub), ("A_eq", A_eq), ("b_eq", b_eq)):
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"{name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_ub", A_ub)
        object.__setattr__(self, "b_ub", b_ub)
        object.__setattr__(self, "A_eq", A_eq)
        object.__setattr__(self, "b_eq", b_eq)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_ub(self) -> int:
        return self.A_ub.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    def max_violation(self, x) -> float:
        """Largest violation of any constraint (including ``x >= 0``) at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = float(np.max(np.maximum(-x, 0.0), initial=0.0))
        if self.n_ub:
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub, initial=0.0)))
        if self.n_eq:
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        return worst


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class _Tableau:
    """Row-equilibrated tableau ``[A | rhs]`` with a cost row and basis list."""

    def __init__(self, A, b, basis):
        self.T = np.hstack([A, b[:, None]])
        self.basis = list(basis)

    def pivot(self, row, col):
        T = self.T
        T[row] /= T[row, col]
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        self.basis[row] = col

    def run(self, cost, allowed, max_iter):
        """Minimise ``cost.x`` over the current basis; returns (status, iterations)."""
        T = self.T
        m = T.shape[0]
        it = 0
        while it < max_iter:
            cb = cost[self.basis]
            reduced = cost[:-1] - cb @ T[:, :-1]
            cand = np.flatnonzero(allowed & (reduced < -_COST_TOL))
            if cand.size == 0:
                return OPTIMAL, it
            col = int(cand[0])  # Bland: lowest index
            colv = T[:, col]
            pos = colv > _PIVOT_TOL
            if not np.any(pos):
                return UNBOUNDED, it
            ratios = np.full(m, np.inf)
            ratios[pos] = T[pos, -1] / colv[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + 1e-12 * max(1.0, abs(best)))
            row = int(min(ties, key=lambda r: self.basis[r]))
            self.pivot(row, col)
            it += 1
        return ITERATION_LIMIT, it


def simplex_solve(lp: LpProblem, max_iter: int = 100_000) -> LpSolution:
    """Two-phase primal simplex with Bland's anti-cycling rule.

    Rows are scaled to unit max-norm; rows with negative right-hand side are
    negated and receive an artificial variable, as do all equality rows.  The
    final basic solution is recomputed from the original data by a direct
    solve to wash out accumulated pivoting error.
    """
    n = lp.n_vars
    m_ub, m_eq = lp.n_ub, lp.n_eq
    A = np.vstack([lp.A_ub, lp.A_eq]) if m_ub + m_eq else np.zeros((0, n))
    b = np.concatenate([lp.b_ub, lp.b_eq])
    m = m_ub + m_eq

    if m == 0:
        if np.any(lp.c < 0):
            return LpSolution(UNBOUNDED, None, -np.inf, 0)
        return LpSolution(OPTIMAL, np.zeros(n), 0.0, 0)

    slack = np.zeros((m, m_ub))
    slack[np.arange(m_ub), np.arange(m_ub)] = 1.0
    M = np.hstack([A, slack])
    rhs = b.copy()
    flip = rhs < 0
    M[flip] *= -1.0
    rhs[flip] *= -1.0
    scale = np.max(np.abs(M), axis=1)
    scale[scale == 0] = 1.0
    M /= scale[:, None]
    rhs /= scale

    needs_art = np.ones(m, dtype=bool)
    needs_art[:m_ub] = flip[:m_ub]
    art_rows = np.flatnonzero(needs_art)
    n_art = art_rows.size
    art = np.zeros((m, n_art))
    art[art_rows, np.arange(n_art)] = 1.0
    full = np.hstack([M, art])
    n_struct = n + m_ub
    basis = [0] * m
    for i in range(m_ub):
        if not needs_art[i]:
            basis[i] = n + i
    for k, r in enumerate(art_rows):
        basis[r] = n_struct + k
    tab = _Tableau(full, rhs, basis)
    total_cols = n_struct + n_art
    iters = 0

    if n_art:
        cost1 = np.zeros(total_cols + 1)
        cost1[n_struct:total_cols] = 1.0
        allowed = np.ones(total_cols, dtype=bool)
        status, it = tab.run(cost1, allowed, max_iter)
        iters += it
        if status == ITERATION_LIMIT:
            return LpSolution(ITERATION_LIMIT, None, np.nan, iters)
        infeas = float(np.sum(tab.T[[i for i, bv in enumerate(tab.basis) if bv >= n_struct], -1]))
        if infeas > 1e-9:
            return LpSolution(INFEASIBLE, None, np.nan, iters)
        # drive remaining (zero-level) artificials out of the basis
        drop = []
        for r, bv in enumerate(list(tab.basis)):
            if bv < n_struct:
                continue
            row = tab.T[r, :n_struct]
            nz = np.flatnonzero(np.abs(row) > _PIVOT_TOL)
            if nz.size:
                tab.pivot(r, int(nz[0]))
            else:
                drop.append(r)
        if drop:
            keep = np.setdiff1d(np.arange(tab.T.shape[0]), drop)
            tab.T = tab.T[keep]
            tab.basis = [tab.basis[i] for i in keep]
        tab.T = np.hstack([tab.T[:, :n_struct], tab.T[:, -1:]])

    cost2 = np.zeros(n_struct + 1)
    cost2[:n] = lp.c
    allowed = np.ones(n_struct, dtype=bool)
    status, it = tab.run(cost2, allowed, max_iter - iters)
    iters += it
    if status != OPTIMAL:
        return LpSolution(status, None, -np.inf if status == UNBOUNDED else np.nan, iters)

    x_full = np.zeros(n_struct)
    basis = np.array(tab.basis)
    x_full[basis] = tab.T[:, -1]
    x = np.maximum(x_full[:n], 0.0)
    polished = _polish(A, b, m_ub, basis, n)
    if polished is not None and lp.max_violation(polished) < lp.max_violation(x):
        x = polished
    return LpSolution(OPTIMAL, x, float(lp.c @ x), iters)


def _polish(A, b, m_ub, basis, n):
    """Re-solve the basic equations on the unscaled data; ``None`` on failure."""
    m = A.shape[0]
    B = np.hstack([A, np.eye(m)[:, :m_ub]])[:, basis]
    try:
        if B.shape[0] == B.shape[1]:
            sol = np.linalg.solve(B, b)
        else:
            sol = np.linalg.lstsq(B, b, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or np.any(sol < -1e-9):
        return None
    full = np.zeros(n + m_ub)
    full[basis] = np.maximum(sol, 0.0)
    return full[:n]
