import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnembed.milp import (
    EPS_FEAS,
    MilpModel,
    duality_audit,
    relax,
    reset_duality_audit,
    solve_bip,
    solve_lp,
    write_lp,
)
from oracles import enumerate_bip


def test_model_validation():
    m = MilpModel()
    m.add_var("x")
    with pytest.raises(ValueError):
        m.add_var("x")
    with pytest.raises(ValueError):
        m.add_var("y", lb=2, ub=1)
    with pytest.raises(ValueError):
        m.add_constr("c", {"z": 1.0}, "<=", 1)
    with pytest.raises(ValueError):
        m.add_constr("c", {"x": 1.0}, "<", 1)
    m.add_constr("c", {"x": 1.0}, "<=", 1)
    with pytest.raises(ValueError):
        m.add_constr("c", {"x": 1.0}, "<=", 2)
    with pytest.raises(ValueError):
        MilpModel(sense="minimize")


def test_dual_sign_ge():
    # min x subject to x >= 5: dual is +1 (objective moves with the rhs)
    m = MilpModel()
    m.add_var("x", lb=-math.inf, obj=1.0)
    m.add_constr("floor", {"x": 1.0}, ">=", 5.0)
    sol = solve_lp(m)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(5.0)
    assert sol.duals["floor"] == pytest.approx(1.0)


def test_dual_sign_le_and_eq():
    m = MilpModel()
    m.add_var("x", lb=-math.inf, obj=-1.0)
    m.add_constr("cap", {"x": 1.0}, "<=", 5.0)
    sol = solve_lp(m)
    assert sol.objective == pytest.approx(-5.0)
    assert sol.duals["cap"] == pytest.approx(-1.0)

    m2 = MilpModel()
    m2.add_var("x", obj=1.0)
    m2.add_var("y", obj=2.0)
    m2.add_constr("bal", {"x": 1.0, "y": 1.0}, "=", 3.0)
    sol2 = solve_lp(m2)
    assert sol2.objective == pytest.approx(3.0)
    assert sol2.duals["bal"] == pytest.approx(1.0)


def test_dual_sign_max_sense():
    # max 3x + 2y, x + y <= 4, x <= 2: row dual 2, upper-bound dual on x is 1
    m = MilpModel(sense="max")
    m.add_var("x", ub=2.0, obj=3.0)
    m.add_var("y", obj=2.0)
    m.add_constr("cap", {"x": 1.0, "y": 1.0}, "<=", 4.0)
    sol = solve_lp(m)
    assert sol.objective == pytest.approx(10.0)
    assert sol.duals["cap"] == pytest.approx(2.0)
    assert sol.ub_duals["x"] == pytest.approx(1.0)


def test_lp_statuses():
    m = MilpModel()
    m.add_var("x", obj=1.0)
    m.add_constr("a", {"x": 1.0}, "<=", 1.0)
    m.add_constr("b", {"x": 1.0}, ">=", 2.0)
    assert solve_lp(m).status == "infeasible"

    m2 = MilpModel()
    m2.add_var("x", lb=-math.inf, obj=1.0)
    assert solve_lp(m2).status == "unbounded"


def test_bip_knapsack():
    # max 10a + 6b + 4c, 5a + 4b + 3c <= 8
    m = MilpModel(sense="max")
    for name, p in (("a", 10.0), ("b", 6.0), ("c", 4.0)):
        m.add_var(name, ub=1.0, obj=p, integer=True)
    m.add_constr("w", {"a": 5.0, "b": 4.0, "c": 3.0}, "<=", 8.0)
    sol = solve_bip(m)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(14.0)
    assert sol.primal["a"] == pytest.approx(1.0)
    assert sol.primal["c"] == pytest.approx(1.0)
    best, x = enumerate_bip(m)
    assert best == pytest.approx(sol.objective)


def test_bip_rejects_wide_integer_bounds():
    m = MilpModel()
    m.add_var("x", ub=2.0, obj=1.0, integer=True)
    with pytest.raises(ValueError):
        solve_bip(m)


def test_bip_infeasible():
    m = MilpModel()
    m.add_var("x", ub=1.0, obj=1.0, integer=True)
    m.add_constr("c", {"x": 1.0}, ">=", 2.0)
    assert solve_bip(m).status == "infeasible"


def test_bip_time_limit_status():
    rng = np.random.default_rng(0)
    n, rows = 60, 40
    m = MilpModel()
    names = [m.add_var(f"x{j}", ub=1.0, obj=float(rng.integers(-9, 10)), integer=True)
             for j in range(n)]
    for r in range(rows):
        coeffs = {nm: float(c) for nm, c in zip(names, rng.integers(-5, 6, size=n))}
        m.add_constr(f"r{r}", coeffs, "<=", float(rng.integers(1, 15)))
    sol = solve_bip(m, time_limit=1e-9)
    assert sol.status == "time_limit"
    assert sol.objective is None


def test_relax_lifts_bounds():
    m = MilpModel(sense="max")
    m.add_var("a", ub=1.0, obj=2.0, integer=True)
    m.add_var("b", ub=1.0, obj=1.0, integer=True)
    m.add_constr("pick", {"a": 1.0, "b": 1.0}, "=", 1.0)
    r = relax(m, lift_upper=["a", "b"])
    assert not any(v.integer for v in r.variables)
    assert all(v.ub == math.inf for v in r.variables)
    sol = solve_lp(r)
    # convexity row still caps the relaxation at the integer optimum here
    assert sol.objective == pytest.approx(2.0)


def test_duality_audit_counts():
    reset_duality_audit()
    m = MilpModel()
    m.add_var("x", obj=1.0)
    m.add_constr("floor", {"x": 1.0}, ">=", 1.0)
    solve_lp(m)
    solve_lp(m)
    audit = duality_audit()
    assert audit["checks"] == 2
    assert audit["max_rel_gap"] <= 1e-6


def test_write_lp(tmp_path):
    m = MilpModel(sense="max")
    m.add_var("x", ub=1.0, obj=3.0, integer=True)
    m.add_var("y", obj=-1.5)
    m.add_constr("c1", {"x": 2.0, "y": -1.0}, "<=", 4.0)
    path = tmp_path / "model.lp"
    write_lp(m, str(path))
    text = path.read_text()
    assert "Maximize" in text
    assert "c1: 2 x - 1 y <= 4" in text
    assert "Binary" in text


def _kkt_check(model, sol):
    """Stationarity and complementary slackness in the user dual convention."""
    lhs = {}
    for con in model.constraints:
        lhs[con.name] = sum(c * sol.primal[vn] for vn, c in con.coeffs)
        slack = lhs[con.name] - con.rhs
        if con.rel == "<=":
            assert slack <= EPS_FEAS
        elif con.rel == ">=":
            assert slack >= -EPS_FEAS
        else:
            assert abs(slack) <= EPS_FEAS
        assert abs(sol.duals[con.name] * slack) <= 1e-5
    for v in model.variables:
        x = sol.primal[v.name]
        assert v.lb - EPS_FEAS <= x <= v.ub + EPS_FEAS
        grad = sol.lb_duals[v.name] + sol.ub_duals[v.name]
        for con in model.constraints:
            for vn, c in con.coeffs:
                if vn == v.name:
                    grad += c * sol.duals[con.name]
        assert grad == pytest.approx(v.obj, abs=1e-6)
        assert abs(sol.lb_duals[v.name] * (x - v.lb)) <= 1e-5
        assert abs(sol.ub_duals[v.name] * (v.ub - x)) <= 1e-5


@given(st.integers(0, 100_000))
@settings(max_examples=80, deadline=None)
def test_lp_kkt_property(seed):
    """Returned primal/dual pairs satisfy the KKT conditions."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    m = MilpModel(sense="min" if rng.random() < 0.5 else "max")
    names = []
    for j in range(n):
        names.append(m.add_var(f"x{j}", ub=float(rng.integers(1, 11)),
                               obj=float(rng.integers(-9, 10))))
    for r in range(int(rng.integers(0, 6))):
        coeffs = {nm: float(c) for nm, c in zip(names, rng.integers(-4, 5, size=n))
                  if c != 0}
        if not coeffs:
            continue
        rel = "<=" if rng.random() < 0.7 else (">=" if rng.random() < 0.5 else "=")
        m.add_constr(f"r{r}", coeffs, rel, float(rng.integers(-5, 16)))
    sol = solve_lp(m)
    if sol.status == "optimal":
        _kkt_check(m, sol)
    else:
        assert sol.status == "infeasible"  # box-bounded, never unbounded


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_bip_matches_enumeration_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    m = MilpModel(sense="min" if rng.random() < 0.5 else "max")
    names = [m.add_var(f"x{j}", ub=1.0, obj=float(rng.integers(-9, 10)), integer=True)
             for j in range(n)]
    for r in range(int(rng.integers(0, 5))):
        coeffs = {nm: float(c) for nm, c in zip(names, rng.integers(-5, 6, size=n))
                  if c != 0}
        if not coeffs:
            continue
        rel = ("<=", ">=", "=")[rng.integers(0, 3)]
        m.add_constr(f"r{r}", coeffs, rel, float(rng.integers(-4, 9)))
    sol = solve_bip(m)
    truth = enumerate_bip(m)
    if truth is None:
        assert sol.status == "infeasible"
    else:
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(truth[0], abs=1e-7)
