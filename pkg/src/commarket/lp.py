"""Linear-program container, solver front end, and optimality certificates.

The container keeps everything name-addressed: variables and constraints are
created with string names, and solutions come back as name -> value dicts.
Row duals follow the marginal-value convention for a maximization problem
(dual of a ``<=`` row is nonnegative, dual of a ``==`` row is free, and both
equal the sensitivity of the optimum to the row's right-hand side).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _simplex

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

DEFAULT_TOL = 1e-6

# instances up to this size (variables + constraints) use the built-in
# simplex; anything larger goes to HiGHS
_SIMPLEX_SIZE_LIMIT = 400


@dataclass(frozen=True)
class Variable:
    name: str
    objective: float = 0.0
    free: bool = False

    @property
    def lower(self) -> float:
        return -np.inf if self.free else 0.0


@dataclass(frozen=True)
class Constraint:
    name: str
    relation: str  # "le" or "eq"
    rhs: float


class LinearProgram:
    """A named, sparse ``maximize c @ x`` program."""

    def __init__(self) -> None:
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self._var_index: dict[str, int] = {}
        self._row_index: dict[str, int] = {}
        self._entries: list[tuple[int, int, float]] = []

    # -- construction -----------------------------------------------------

    def add_variable(self, name: str, objective: float = 0.0,
                     free: bool = False) -> int:
        if name in self._var_index:
            raise ValueError(f"duplicate variable {name!r}")
        idx = len(self.variables)
        self.variables.append(Variable(name, float(objective), free))
        self._var_index[name] = idx
        return idx

    def add_constraint(self, name: str,
                       coeffs: Mapping[str, float] | Iterable[tuple[str, float]],
                       relation: str, rhs: float) -> int:
        if relation not in ("le", "eq"):
            raise ValueError(f"relation must be 'le' or 'eq', got {relation!r}")
        if name in self._row_index:
            raise ValueError(f"duplicate constraint {name!r}")
        row = len(self.constraints)
        items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
        for var, val in items:
            if val != 0.0:
                self._entries.append((row, self._var_index[var], float(val)))
        self.constraints.append(Constraint(name, relation, float(rhs)))
        self._row_index[name] = row
        return row

    # -- array views -------------------------------------------------------

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def variable_index(self, name: str) -> int:
        return self._var_index[name]

    def objective_vector(self) -> np.ndarray:
        return np.array([v.objective for v in self.variables], dtype=float)

    def matrix(self) -> sp.csr_matrix:
        rows = [e[0] for e in self._entries]
        cols = [e[1] for e in self._entries]
        vals = [e[2] for e in self._entries]
        shape = (self.num_constraints, self.num_variables)
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()

    def rhs_vector(self) -> np.ndarray:
        return np.array([r.rhs for r in self.constraints], dtype=float)

    def eq_mask(self) -> np.ndarray:
        return np.array([r.relation == "eq" for r in self.constraints])

    def free_mask(self) -> np.ndarray:
        return np.array([v.free for v in self.variables])

    def dump(self) -> str:
        """Human-readable rendering of the whole program, for debugging."""
        A = self.matrix().tocoo()
        terms: dict[int, list[str]] = {i: [] for i in range(self.num_constraints)}
        for i, j, v in zip(A.row, A.col, A.data):
            terms[i].append(f"{v:+g} {self.variables[j].name}")
        lines = ["maximize"]
        obj = [f"{v.objective:+g} {v.name}" for v in self.variables
               if v.objective != 0.0]
        lines.append("  " + (" ".join(obj) if obj else "0"))
        lines.append("subject to")
        for i, row in enumerate(self.constraints):
            op = "<=" if row.relation == "le" else "=="
            lines.append(f"  {row.name}: {' '.join(terms[i]) or '0'} {op} {row.rhs:g}")
        free = [v.name for v in self.variables if v.free]
        if free:
            lines.append("free: " + " ".join(free))
        return "\n".join(lines)


@dataclass
class LpSolution:
    status: str
    primal: dict[str, float] = field(default_factory=dict)
    duals: dict[str, float] = field(default_factory=dict)
    objective: float | None = None


def solve(lp: LinearProgram, tol: float = DEFAULT_TOL,
          method: str = "auto") -> LpSolution:
    """Solve the program; deterministic for a fixed input, duals included.

    method: "auto" (size-based), "simplex" (built-in), or "highs" (scipy).
    """
    if method == "auto":
        size = lp.num_variables + lp.num_constraints
        method = "simplex" if size <= _SIMPLEX_SIZE_LIMIT else "highs"
    if method == "simplex":
        return _solve_simplex(lp, tol)
    if method == "highs":
        return _solve_highs(lp)
    raise ValueError(f"unknown method {method!r}")


def _solve_simplex(lp: LinearProgram, tol: float) -> LpSolution:
    A = lp.matrix().toarray()
    b = lp.rhs_vector()
    c = lp.objective_vector()
    is_eq = lp.eq_mask()
    free = np.flatnonzero(lp.free_mask())
    if free.size:
        # split x = x+ - x- for free variables
        A = np.hstack([A, -A[:, free]])
        c = np.concatenate([c, -c[free]])
    res = _simplex.solve_standard(c, A, b, is_eq, tol=min(tol, 1e-9))
    if res.status != OPTIMAL:
        return LpSolution(res.status)
    x = res.x[:lp.num_variables].copy()
    for k, j in enumerate(free):
        x[j] -= res.x[lp.num_variables + k]
    return _package(lp, x, res.y)


def _solve_highs(lp: LinearProgram) -> LpSolution:
    c = lp.objective_vector()
    b = lp.rhs_vector()
    is_eq = lp.eq_mask()
    A = lp.matrix()
    A_ub = A[~is_eq] if (~is_eq).any() else None
    b_ub = b[~is_eq] if A_ub is not None else None
    A_eq = A[is_eq] if is_eq.any() else None
    b_eq = b[is_eq] if A_eq is not None else None
    bounds = [(None, None) if v.free else (0, None) for v in lp.variables]
    res = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=bounds, method="highs")
    if res.status == 2:
        return LpSolution(INFEASIBLE)
    if res.status == 3:
        return LpSolution(UNBOUNDED)
    if res.status != 0:
        raise RuntimeError(f"linprog failed: {res.message}")
    # we maximize, linprog minimizes the negated objective, so marginals flip
    y = np.zeros(lp.num_constraints)
    if A_ub is not None:
        y[~is_eq] = -res.ineqlin.marginals
    if A_eq is not None:
        y[is_eq] = -res.eqlin.marginals
    return _package(lp, res.x, y)


def _package(lp: LinearProgram, x: np.ndarray, y: np.ndarray) -> LpSolution:
    primal = {v.name: float(x[j]) for j, v in enumerate(lp.variables)}
    duals = {r.name: float(y[i]) for i, r in enumerate(lp.constraints)}
    objective = float(lp.objective_vector() @ x)
    return LpSolution(OPTIMAL, primal, duals, objective)


@dataclass
class CertificateReport:
    """Worst-case residuals of the optimality system, all as absolute values.

    ``ok`` compares them against ``tol`` scaled by the data magnitudes, so a
    certificate for a program in the hundreds-of-kWh range does not demand
    more digits than the solver carries.
    """
    primal_infeasibility: float
    dual_infeasibility: float
    complementary_slackness: float
    duality_gap: float
    ok: bool


def check_certificate(lp: LinearProgram, sol: LpSolution,
                      tol: float = DEFAULT_TOL) -> CertificateReport:
    """Verify optimality of ``sol`` from the program data alone.

    Recomputes primal feasibility, dual feasibility, complementary slackness
    and the primal/dual objective gap without trusting anything the solver
    did internally; only the reported primal/dual values are used.
    """
    if sol.status != OPTIMAL:
        raise ValueError(f"cannot certify a solution with status {sol.status!r}")
    A = lp.matrix()
    b = lp.rhs_vector()
    c = lp.objective_vector()
    is_eq = lp.eq_mask()
    x = np.array([sol.primal[v.name] for v in lp.variables])
    y = np.array([sol.duals[r.name] for r in lp.constraints])

    act = A @ x
    resid = act - b
    primal_inf = 0.0
    if is_eq.any():
        primal_inf = float(np.abs(resid[is_eq]).max())
    if (~is_eq).any():
        primal_inf = max(primal_inf, float(resid[~is_eq].max(initial=0.0)))
    bound_viol = -x[~lp.free_mask()]
    if bound_viol.size:
        primal_inf = max(primal_inf, float(bound_viol.max(initial=0.0)))

    # reduced costs: g = A^T y - c must be >= 0 (== 0 on free columns)
    g = A.T @ y - c
    free = lp.free_mask()
    dual_inf = 0.0
    if free.any():
        dual_inf = float(np.abs(g[free]).max())
    if (~free).any():
        dual_inf = max(dual_inf, float((-g[~free]).max(initial=0.0)))
    if (~is_eq).any():
        dual_inf = max(dual_inf, float((-y[~is_eq]).max(initial=0.0)))

    slack = b - act
    cs = 0.0
    if (~is_eq).any():
        cs = float(np.abs(y[~is_eq] * slack[~is_eq]).max())
    if (~free).any():
        cs = max(cs, float(np.abs(x[~free] * g[~free]).max()))

    gap = abs(float(c @ x) - float(b @ y))

    scale = 1.0 + max(
        float(np.abs(b).max(initial=0.0)), float(np.abs(c).max(initial=0.0)),
        float(np.abs(x).max(initial=0.0)), float(np.abs(y).max(initial=0.0)))
    ok = max(primal_inf, dual_inf, cs, gap) <= tol * scale
    return CertificateReport(primal_inf, dual_inf, cs, gap, ok)
