"""Dense two-phase revised simplex for small linear programs.

Solves ``maximize c @ x  s.t.  A @ x (<= | ==) b,  x >= 0`` and returns row
duals in the caller's orientation (inequality duals nonnegative, equality
duals free).  Free variables are handled one level up by column splitting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_STALL_LIMIT = 50  # degenerate pivots in a row before switching to Bland's rule
_REFACTOR_EVERY = 100


@dataclass
class StandardResult:
    status: str
    x: np.ndarray | None
    y: np.ndarray | None
    objective: float | None
    iterations: int


class _Tableau:
    """Basis bookkeeping shared by both phases."""

    def __init__(self, M: np.ndarray, b: np.ndarray, basis: np.ndarray):
        self.M = M
        self.b = b
        self.basis = basis.copy()
        self.binv = np.eye(M.shape[0])
        self.xb = b.copy()
        self.pivots = 0

    def refactor(self) -> None:
        B = self.M[:, self.basis]
        self.binv = np.linalg.solve(B, np.eye(B.shape[0]))
        self.xb = self.binv @ self.b

    def pivot(self, enter: int, row: int, d: np.ndarray, theta: float) -> None:
        self.xb -= theta * d
        self.xb[row] = theta
        self.basis[row] = enter
        # product-form update of the inverse
        piv = self.binv[row] / d[row]
        self.binv -= np.outer(d, piv)
        self.binv[row] = piv
        self.pivots += 1
        if self.pivots % _REFACTOR_EVERY == 0:
            self.refactor()


def _run_phase(tab: _Tableau, cost: np.ndarray, allowed: np.ndarray,
               tol: float, max_iter: int) -> str:
    """Iterate until optimal or unbounded; raises on pivot-count blowout."""
    stall = 0
    while True:
        if tab.pivots >= max_iter:
            raise RuntimeError(
                f"simplex did not converge within {tab.pivots} pivots")
        y = cost[tab.basis] @ tab.binv
        reduced = cost - y @ tab.M
        cand = allowed & (reduced > tol)
        cand[tab.basis] = False
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return OPTIMAL
        if stall >= _STALL_LIMIT:
            enter = int(idx[0])  # Bland: lowest eligible index
        else:
            enter = int(idx[np.argmax(reduced[idx])])
        d = tab.binv @ tab.M[:, enter]
        pos = np.flatnonzero(d > tol)
        if pos.size == 0:
            return UNBOUNDED
        ratios = tab.xb[pos] / d[pos]
        theta = ratios.min()
        ties = pos[np.flatnonzero(ratios <= theta + tol * (1.0 + abs(theta)))]
        row = int(ties[np.argmin(tab.basis[ties])])  # deterministic, Bland-safe
        theta = tab.xb[row] / d[row]
        stall = stall + 1 if theta <= tol else 0
        tab.pivot(enter, row, d, theta)


def solve_standard(c: np.ndarray, A: np.ndarray, b: np.ndarray,
                   is_eq: np.ndarray, tol: float = 1e-9) -> StandardResult:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    is_eq = np.asarray(is_eq, dtype=bool)
    m, n = A.shape

    if m == 0:
        if np.any(c > tol):
            return StandardResult(UNBOUNDED, None, None, None, 0)
        x = np.zeros(n)
        return StandardResult(OPTIMAL, x, np.zeros(0), 0.0, 0)

    # Orient every row to b >= 0 (phase 1 needs it); a flipped row's dual
    # changes sign relative to the caller's convention.
    flip = np.where(b < 0.0, -1.0, 1.0)
    A = A * flip[:, None]
    b = b * flip
    eq_flipped = is_eq | (flip < 0)

    ineq_rows = np.flatnonzero(~is_eq)
    n_slack = ineq_rows.size
    art_rows = np.flatnonzero(eq_flipped)
    n_art = art_rows.size
    n_total = n + n_slack + n_art

    M = np.zeros((m, n_total))
    M[:, :n] = A
    slack_col_of_row = {}
    for k, i in enumerate(ineq_rows):
        M[i, n + k] = flip[i]  # flipped <= rows carry -1 slack coefficients
        slack_col_of_row[i] = n + k
    for k, i in enumerate(art_rows):
        M[i, n + n_slack + k] = 1.0

    basis = np.empty(m, dtype=int)
    art_of_row = {}
    for k, i in enumerate(art_rows):
        basis[i] = n + n_slack + k
        art_of_row[i] = n + n_slack + k
    for i in range(m):
        if i not in art_of_row:
            basis[i] = slack_col_of_row[i]

    tab = _Tableau(M, b, basis)
    max_iter = max(200, 50 * (m + n_total))
    allowed = np.ones(n_total, dtype=bool)

    if n_art:
        cost1 = np.zeros(n_total)
        cost1[n + n_slack:] = -1.0
        status = _run_phase(tab, cost1, allowed, tol, max_iter)
        assert status == OPTIMAL  # phase 1 is bounded below by construction
        resid = -(cost1[tab.basis] @ tab.xb)
        if resid > tol * max(1.0, float(np.abs(b).sum())):
            return StandardResult(INFEASIBLE, None, None, None, tab.pivots)
        _drive_out_artificials(tab, n + n_slack, tol)
        allowed[n + n_slack:] = False

    cost2 = np.zeros(n_total)
    cost2[:n] = c
    status = _run_phase(tab, cost2, allowed, tol, max_iter)
    if status == UNBOUNDED:
        return StandardResult(UNBOUNDED, None, None, None, tab.pivots)

    x = np.zeros(n)
    for pos, j in enumerate(tab.basis):
        if j < n:
            x[j] = tab.xb[pos]
    np.clip(x, 0.0, None, out=x)
    y = (cost2[tab.basis] @ tab.binv) * flip
    objective = float(c @ x)
    return StandardResult(OPTIMAL, x, y, objective, tab.pivots)


def _drive_out_artificials(tab: _Tableau, first_art: int, tol: float) -> None:
    """Pivot basic artificials out where possible.

    An artificial that cannot leave sits in a redundant row (its row of
    B^-1 @ M is zero on every real column), so it never moves again and can
    stay basic at zero through phase 2.
    """
    for pos in range(len(tab.basis)):
        if tab.basis[pos] < first_art:
            continue
        row = tab.binv[pos] @ tab.M[:, :first_art]
        row[tab.basis[tab.basis < first_art]] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-7)
        if cand.size == 0:
            continue
        enter = int(cand[0])
        d = tab.binv @ tab.M[:, enter]
        tab.pivot(enter, pos, d, 0.0)
