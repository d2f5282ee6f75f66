"""Solver unit tests plus the brute-force vertex-enumeration cross-check."""
from __future__ import annotations

import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from commarket import lp as lpmod
from commarket.lp import LinearProgram, check_certificate, solve

METHODS = ["simplex", "highs"]


def _single_bound_lp():
    prog = LinearProgram()
    prog.add_variable("x", objective=1.0)
    prog.add_constraint("cap", {"x": 1.0}, "le", 2.0)
    return prog


@pytest.mark.parametrize("method", METHODS)
def test_single_variable_bound(method):
    sol = solve(_single_bound_lp(), method=method)
    assert sol.status == "optimal"
    assert_allclose(sol.primal["x"], 2.0, atol=1e-9)
    assert_allclose(sol.duals["cap"], 1.0, atol=1e-9)
    assert_allclose(sol.objective, 2.0, atol=1e-9)


@pytest.mark.parametrize("method", METHODS)
def test_two_variable_duals(method):
    prog = LinearProgram()
    prog.add_variable("a", objective=3.0)
    prog.add_variable("b", objective=2.0)
    prog.add_constraint("sum", {"a": 1.0, "b": 1.0}, "le", 4.0)
    prog.add_constraint("cap_a", {"a": 1.0}, "le", 2.0)
    sol = solve(prog, method=method)
    assert sol.status == "optimal"
    assert_allclose(sol.objective, 10.0, atol=1e-9)
    assert_allclose([sol.primal["a"], sol.primal["b"]], [2.0, 2.0], atol=1e-9)
    assert_allclose([sol.duals["sum"], sol.duals["cap_a"]], [2.0, 1.0],
                    atol=1e-9)
    cert = check_certificate(prog, sol, tol=1e-8)
    assert cert.ok


@pytest.mark.parametrize("method", METHODS)
def test_infeasible(method):
    prog = LinearProgram()
    prog.add_variable("x", objective=1.0)
    prog.add_constraint("hi", {"x": 1.0}, "le", 1.0)
    prog.add_constraint("lo", {"x": -1.0}, "le", -2.0)
    sol = solve(prog, method=method)
    assert sol.status == "infeasible"
    assert sol.objective is None


@pytest.mark.parametrize("method", METHODS)
def test_unbounded(method):
    prog = LinearProgram()
    prog.add_variable("x", objective=1.0)
    prog.add_constraint("lo", {"x": -1.0}, "le", 0.0)
    sol = solve(prog, method=method)
    assert sol.status == "unbounded"


@pytest.mark.parametrize("method", METHODS)
def test_free_variable_duals(method):
    # max x - y  s.t.  x + y == 1, x <= 3, y free  ->  x=3, y=-2
    prog = LinearProgram()
    prog.add_variable("x", objective=1.0)
    prog.add_variable("y", objective=-1.0, free=True)
    prog.add_constraint("link", {"x": 1.0, "y": 1.0}, "eq", 1.0)
    prog.add_constraint("cap", {"x": 1.0}, "le", 3.0)
    sol = solve(prog, method=method)
    assert sol.status == "optimal"
    assert_allclose(sol.objective, 5.0, atol=1e-9)
    assert_allclose(sol.primal["y"], -2.0, atol=1e-9)
    assert_allclose(sol.duals["link"], -1.0, atol=1e-9)
    assert_allclose(sol.duals["cap"], 2.0, atol=1e-9)


@pytest.mark.parametrize("method", METHODS)
def test_negative_rhs_equality(method):
    # the row is stored as -x == -2; the dual convention must survive the
    # internal sign flip
    prog = LinearProgram()
    prog.add_variable("x", objective=1.0)
    prog.add_constraint("pin", {"x": -1.0}, "eq", -2.0)
    sol = solve(prog, method=method)
    assert sol.status == "optimal"
    assert_allclose(sol.primal["x"], 2.0, atol=1e-9)
    assert_allclose(sol.duals["pin"], -1.0, atol=1e-9)


def test_degenerate_cycling_guard():
    # Beale's classic cycling example (as a maximization); the stall counter
    # must hand over to Bland's rule and terminate at the true optimum 1/20
    prog = LinearProgram()
    prog.add_variable("x1", objective=0.75)
    prog.add_variable("x2", objective=-150.0)
    prog.add_variable("x3", objective=0.02)
    prog.add_variable("x4", objective=-6.0)
    prog.add_constraint("r1", {"x1": 0.25, "x2": -60.0, "x3": -0.04, "x4": 9.0},
                        "le", 0.0)
    prog.add_constraint("r2", {"x1": 0.5, "x2": -90.0, "x3": -0.02, "x4": 3.0},
                        "le", 0.0)
    prog.add_constraint("r3", {"x3": 1.0}, "le", 1.0)
    sol = solve(prog, method="simplex")
    assert sol.status == "optimal"
    assert_allclose(sol.objective, 0.05, atol=1e-9)


def test_determinism():
    prog = _single_bound_lp()
    a = solve(prog, method="simplex")
    b = solve(prog, method="simplex")
    assert a.primal == b.primal and a.duals == b.duals
    assert a.objective == b.objective


def test_certificate_rejects_tampering():
    prog = LinearProgram()
    prog.add_variable("a", objective=3.0)
    prog.add_variable("b", objective=2.0)
    prog.add_constraint("sum", {"a": 1.0, "b": 1.0}, "le", 4.0)
    prog.add_constraint("cap_a", {"a": 1.0}, "le", 2.0)
    sol = solve(prog)
    sol.primal["a"] = 5.0
    cert = check_certificate(prog, sol)
    assert not cert.ok
    assert cert.primal_infeasibility > 1.0


def test_dump_renders_rows():
    prog = _single_bound_lp()
    text = prog.dump()
    assert "maximize" in text and "cap" in text and "<=" in text


def test_duplicate_names_rejected():
    prog = LinearProgram()
    prog.add_variable("x")
    with pytest.raises(ValueError):
        prog.add_variable("x")
    prog.add_constraint("r", {"x": 1.0}, "le", 1.0)
    with pytest.raises(ValueError):
        prog.add_constraint("r", {"x": 1.0}, "le", 2.0)


# ---------------------------------------------------------------------------
# brute-force oracle: enumerate basic feasible points of the boxed polytope
# ---------------------------------------------------------------------------

_BOX = 1e8


def _enumerate_optimum(c, A, b, is_eq, free, box):
    """Exact-ish LP solve by enumerating vertices inside a +-box bound."""
    n = len(c)
    rows = []
    rhs = []
    for a_i, b_i, eq in zip(A, b, is_eq):
        rows.append(a_i)
        rhs.append(b_i)
        if eq:
            rows.append(-a_i)
            rhs.append(-b_i)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append(e.copy())
        rhs.append(box)
        e2 = -e
        rows.append(e2)
        rhs.append(box if free[j] else 0.0)
    R = np.array(rows)
    h = np.array(rhs)

    combos = np.array(list(itertools.combinations(range(len(R)), n)))
    mats = R[combos]
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 0.5  # all-integer rows: nonsingular means |det| >= 1
    if not ok.any():
        return None, None
    verts = np.linalg.solve(mats[ok], h[combos[ok]][..., None])[..., 0]
    feas_tol = 1e-6 * np.maximum(1.0, np.abs(h))
    feasible = np.all(R @ verts.T <= (h + feas_tol)[:, None], axis=0)
    if not feasible.any():
        return None, None
    v = verts[feasible]
    vals = v @ c
    best = int(np.argmax(vals))
    return float(vals[best]), v[best]


def _oracle(c, A, b, is_eq, free):
    val1, _ = _enumerate_optimum(c, A, b, is_eq, free, _BOX)
    if val1 is None:
        return "infeasible", None
    val2, _ = _enumerate_optimum(c, A, b, is_eq, free, 2 * _BOX)
    if val2 > val1 + 1e-6 * max(1.0, abs(val1)):
        return "unbounded", None
    return "optimal", val1


def _random_program(rng):
    n = int(rng.integers(1, 7))
    m = int(rng.integers(1, 7))
    A = rng.integers(-5, 6, size=(m, n)).astype(float)
    b = rng.integers(-5, 6, size=m).astype(float)
    c = rng.integers(-5, 6, size=n).astype(float)
    is_eq = rng.random(m) < 0.25
    free = rng.random(n) < 0.25
    prog = LinearProgram()
    for j in range(n):
        prog.add_variable(f"x{j}", objective=c[j], free=bool(free[j]))
    for i in range(m):
        coeffs = {f"x{j}": A[i, j] for j in range(n)}
        prog.add_constraint(f"r{i}", coeffs, "eq" if is_eq[i] else "le",
                            b[i])
    return prog, (c, A, b, is_eq, free)


def test_simplex_matches_vertex_enumeration():
    rng = np.random.default_rng(20240811)
    counts = {"optimal": 0, "infeasible": 0, "unbounded": 0}
    for trial in range(500):
        prog, (c, A, b, is_eq, free) = _random_program(rng)
        want_status, want_obj = _oracle(c, A, b, is_eq, free)
        sol = solve(prog, method="simplex")
        assert sol.status == want_status, (
            f"trial {trial}: solver said {sol.status}, oracle {want_status}\n"
            + prog.dump())
        counts[sol.status] += 1
        if want_status == "optimal":
            assert abs(sol.objective - want_obj) <= 1e-9 * max(1.0, abs(want_obj)), (
                f"trial {trial}: objective {sol.objective} vs oracle {want_obj}\n"
                + prog.dump())
            cert = check_certificate(prog, sol, tol=1e-7)
            assert cert.ok, (f"trial {trial}: certificate {cert}\n" + prog.dump())
    # the generator must actually exercise all three outcomes
    assert min(counts.values()) > 10, counts
