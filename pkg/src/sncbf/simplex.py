"""Small dense two-phase simplex solver with Bland's rule.

Solves  min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq  over free variables,
via the x = x+ - x- split and slack variables.  Bland's rule rules out
cycling; an iteration cap guards against numerical stalls.  Problems here
are tiny (tens of rows), so no factorization tricks are needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

FEAS_TOL = 1e-9
ITER_CAP = 100_000


class LpStallError(Exception):
    """Simplex hit the iteration cap."""


@dataclass
class LpResult:
    status: str  # 'feasible' | 'infeasible' | 'unbounded'
    x: Optional[np.ndarray] = None
    value: Optional[float] = None

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]
    basis[row] = col


def _simplex_phase(T: np.ndarray, basis: np.ndarray, n_cols: int) -> str:
    """Run simplex on tableau T (objective in last row) with Bland's rule."""
    for _ in range(ITER_CAP):
        # Entering: lowest-index column with negative reduced cost.
        enter = -1
        for j in range(n_cols):
            if T[-1, j] < -FEAS_TOL:
                enter = j
                break
        if enter < 0:
            return "optimal"
        # Leaving: min ratio, ties broken by lowest basis index (Bland).
        best_ratio, leave = np.inf, -1
        for r in range(T.shape[0] - 1):
            a = T[r, enter]
            if a > FEAS_TOL:
                ratio = T[r, -1] / a
                if ratio < best_ratio - FEAS_TOL or (
                    abs(ratio - best_ratio) <= FEAS_TOL
                    and (leave < 0 or basis[r] < basis[leave])
                ):
                    best_ratio, leave = ratio, r
        if leave < 0:
            return "unbounded"
        _pivot(T, basis, leave, enter)
    raise LpStallError("LP stall: iteration cap reached")


def solve_lp(
    c: np.ndarray,
    A_ub: Optional[np.ndarray] = None,
    b_ub: Optional[np.ndarray] = None,
    A_eq: Optional[np.ndarray] = None,
    b_eq: Optional[np.ndarray] = None,
) -> LpResult:
    """Minimize c.x over free x subject to A_ub x <= b_ub, A_eq x = b_eq."""
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()

    m_ub, m_eq = len(b_ub), len(b_eq)
    m = m_ub + m_eq
    # Columns: x+ (n), x- (n), slacks (m_ub), artificials (m).
    n_struct = 2 * n + m_ub
    A = np.zeros((m, n_struct))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n : 2 * n] = -A_ub
    A[:m_ub, 2 * n : 2 * n + m_ub] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    A[m_ub:, n : 2 * n] = -A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0.0
    A[neg] *= -1.0
    b = np.abs(b)

    n_total = n_struct + m
    T = np.zeros((m + 1, n_total + 1))
    T[:m, :n_struct] = A
    T[:m, n_struct:n_total] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n_struct, n_total)
    # Phase-1 objective: sum of artificials, expressed in nonbasic columns.
    T[-1, :n_struct] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()

    status = _simplex_phase(T, basis, n_total)
    if status == "unbounded":  # impossible in phase 1
        return LpResult("infeasible")
    if T[-1, -1] < -1e-7:
        return LpResult("infeasible")

    # Drive remaining artificials out of the basis where possible.
    for r in range(m):
        if basis[r] >= n_struct:
            for j in range(n_struct):
                if abs(T[r, j]) > FEAS_TOL:
                    _pivot(T, basis, r, j)
                    break

    # Phase 2: rebuild objective row over structural columns.
    T[-1, :] = 0.0
    T[-1, :n] = c
    T[-1, n : 2 * n] = -c
    T[-1, n_struct:n_total] = 0.0
    for r in range(m):
        j = basis[r]
        if j < n_struct and T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[r]
    # Forbid artificials from re-entering.
    T[:, n_struct:n_total] = 0.0

    status = _simplex_phase(T, basis, n_struct)
    xp = np.zeros(n_struct)
    for r in range(m):
        if basis[r] < n_struct:
            xp[basis[r]] = T[r, -1]
    x = xp[:n] - xp[n : 2 * n]
    if status == "unbounded":
        return LpResult("unbounded", x=x)
    return LpResult("feasible", x=x, value=float(c @ x))


def lp_feasible_point(
    A_ub: Optional[np.ndarray],
    b_ub: Optional[np.ndarray],
    A_eq: Optional[np.ndarray] = None,
    b_eq: Optional[np.ndarray] = None,
    n: Optional[int] = None,
) -> LpResult:
    """Phase-1 feasibility check; returns a witness when feasible."""
    if n is None:
        n = A_ub.shape[1] if A_ub is not None else A_eq.shape[1]
    return solve_lp(np.zeros(n), A_ub, b_ub, A_eq, b_eq)


def lp_minimize(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> LpResult:
    return solve_lp(c, A_ub, b_ub, A_eq, b_eq)


def lp_maximize(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None) -> LpResult:
    res = solve_lp(-np.asarray(c, dtype=float), A_ub, b_ub, A_eq, b_eq)
    if res.value is not None:
        res.value = -res.value
    return res
