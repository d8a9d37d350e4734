"""LP / binary-program layer over scipy's HiGHS interface.

Models are built by name: variables and constraints are registered with
string names, and solutions map those names back to values and duals.

Dual convention: for every constraint, dual = d(objective)/d(rhs) in the
model's own sense and relation.  So "min x s.t. x >= 5" reports dual +1.
Every LP solve runs a strong-duality self-check; a gap beyond EPS_GAP
(relative to the objective magnitude) raises NumericalFailure rather
than returning a silently bad solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint
from scipy.optimize import linprog as _linprog
from scipy.optimize import milp as _scipy_milp

EPS_FEAS = 1e-7   # feasibility slack accepted when auditing solutions
EPS_GAP = 1e-6    # relative primal/dual or MIP gap treated as converged
EPS_INT = 1e-6    # distance from {0,1} accepted for binary values

_RELS = ("<=", ">=", "=")


class NumericalFailure(Exception):
    """Solver reported success but the solution failed an internal audit."""


@dataclass
class Variable:
    name: str
    lb: float
    ub: float
    obj: float
    integer: bool
    index: int


@dataclass
class Constraint:
    name: str
    coeffs: list        # [(var name, coefficient)]
    rel: str
    rhs: float
    index: int


@dataclass
class LpSolution:
    status: str                       # optimal | infeasible | unbounded | time_limit
    objective: float | None = None
    primal: dict = field(default_factory=dict)
    duals: dict = field(default_factory=dict)      # constraint name -> dual
    lb_duals: dict = field(default_factory=dict)   # variable name -> d(obj)/d(lb)
    ub_duals: dict = field(default_factory=dict)
    mip_gap: float | None = None


class MilpModel:
    def __init__(self, sense: str = "min", name: str = ""):
        if sense not in ("min", "max"):
            raise ValueError(f"sense must be min or max, got {sense!r}")
        self.sense = sense
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self._var_index: dict[str, int] = {}
        self._con_index: dict[str, int] = {}

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                obj: float = 0.0, integer: bool = False) -> str:
        if name in self._var_index:
            raise ValueError(f"duplicate variable {name}")
        if lb > ub:
            raise ValueError(f"variable {name} has lb > ub")
        self._var_index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lb), float(ub), float(obj),
                                       bool(integer), len(self.variables)))
        return name

    def add_constr(self, name: str, coeffs, rel: str, rhs: float) -> str:
        if name in self._con_index:
            raise ValueError(f"duplicate constraint {name}")
        if rel not in _RELS:
            raise ValueError(f"relation must be one of {_RELS}, got {rel!r}")
        if isinstance(coeffs, dict):
            coeffs = list(coeffs.items())
        coeffs = [(vn, float(c)) for vn, c in coeffs]
        for vn, _ in coeffs:
            if vn not in self._var_index:
                raise ValueError(f"constraint {name} references unknown variable {vn}")
        self._con_index[name] = len(self.constraints)
        self.constraints.append(Constraint(name, coeffs, rel, float(rhs),
                                           len(self.constraints)))
        return name

    def var(self, name: str) -> Variable:
        return self.variables[self._var_index[name]]

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constrs(self) -> int:
        return len(self.constraints)


def relax(model: MilpModel, lift_upper=()) -> MilpModel:
    """LP relaxation: drop integrality; vars in lift_upper also lose finite ubs.

    Lifting is only sound for variables whose upper bound is implied by a
    constraint (e.g. binaries under a convexity row); callers must pick
    lift_upper accordingly.
    """
    lift = set(lift_upper)
    out = MilpModel(sense=model.sense, name=model.name + "-relaxed")
    for v in model.variables:
        ub = math.inf if v.name in lift else v.ub
        out.add_var(v.name, lb=v.lb, ub=ub, obj=v.obj, integer=False)
    for c in model.constraints:
        out.add_constr(c.name, list(c.coeffs), c.rel, c.rhs)
    return out


# running audit of the strong-duality self-checks done in solve_lp
_duality_audit = {"checks": 0, "max_rel_gap": 0.0}


def duality_audit() -> dict:
    return dict(_duality_audit)


def reset_duality_audit() -> None:
    _duality_audit["checks"] = 0
    _duality_audit["max_rel_gap"] = 0.0


def _coo(model: MilpModel, cons, signs):
    data, ri, ci = [], [], []
    for r, (con, sign) in enumerate(zip(cons, signs)):
        for vn, c in con.coeffs:
            data.append(sign * c)
            ri.append(r)
            ci.append(model._var_index[vn])
    return sparse.coo_matrix((data, (ri, ci)),
                             shape=(len(cons), model.n_vars)).tocsr()


def _build_matrices(model: MilpModel):
    """Split rows into <= (with >= negated) and == sparse matrices."""
    ub_cons = [c for c in model.constraints if c.rel != "="]
    eq_cons = [c for c in model.constraints if c.rel == "="]
    ub_signs = [-1.0 if c.rel == ">=" else 1.0 for c in ub_cons]
    ub_meta = [(c, c.rel == ">=") for c in ub_cons]
    A_ub = _coo(model, ub_cons, ub_signs) if ub_cons else None
    A_eq = _coo(model, eq_cons, [1.0] * len(eq_cons)) if eq_cons else None
    b_ub = np.array([s * c.rhs for c, s in zip(ub_cons, ub_signs)])
    b_eq = np.array([c.rhs for c in eq_cons])
    return (A_ub, b_ub, ub_meta), (A_eq, b_eq, eq_cons)


def solve_lp(model: MilpModel) -> LpSolution:
    """Solve the model as an LP (integrality flags ignored), with duals."""
    if model.n_vars == 0:
        raise ValueError("model has no variables")
    sense = 1.0 if model.sense == "min" else -1.0
    c = sense * np.array([v.obj for v in model.variables])
    (A_ub, b_ub, ub_meta), (A_eq, b_eq, eq_meta) = _build_matrices(model)
    bounds = [(None if v.lb == -math.inf else v.lb,
               None if v.ub == math.inf else v.ub) for v in model.variables]
    res = _linprog(c, A_ub=A_ub, b_ub=b_ub if len(b_ub) else None,
                   A_eq=A_eq, b_eq=b_eq if len(b_eq) else None,
                   bounds=bounds, method="highs")
    if res.status == 2:
        return LpSolution(status="infeasible")
    if res.status == 3:
        return LpSolution(status="unbounded")
    if res.status != 0:
        raise NumericalFailure(f"linprog failed: {res.message}")

    x = np.asarray(res.x)
    obj_min = float(res.fun)

    # strong-duality audit in the internal min space:
    # b'y for rows plus active-bound contributions must meet the objective
    dual_obj = 0.0
    if len(b_ub):
        dual_obj += float(np.dot(res.ineqlin.marginals, b_ub))
    if len(b_eq):
        dual_obj += float(np.dot(res.eqlin.marginals, b_eq))
    for j, v in enumerate(model.variables):
        ml = float(res.lower.marginals[j])
        mu = float(res.upper.marginals[j])
        if ml != 0.0:
            if v.lb == -math.inf:
                raise NumericalFailure(f"dual weight on infinite lower bound of {v.name}")
            dual_obj += ml * v.lb
        if mu != 0.0:
            if v.ub == math.inf:
                raise NumericalFailure(f"dual weight on infinite upper bound of {v.name}")
            dual_obj += mu * v.ub
    gap = abs(obj_min - dual_obj) / max(1.0, abs(obj_min))
    _duality_audit["checks"] += 1
    _duality_audit["max_rel_gap"] = max(_duality_audit["max_rel_gap"], gap)
    if gap > EPS_GAP:
        raise NumericalFailure(f"strong duality violated: relative gap {gap:.3e}")

    duals = {}
    for k, (con, flipped) in enumerate(ub_meta):
        m = float(res.ineqlin.marginals[k])
        duals[con.name] = sense * (-m if flipped else m)
    for k, con in enumerate(eq_meta):
        duals[con.name] = sense * float(res.eqlin.marginals[k])
    lb_duals = {v.name: sense * float(res.lower.marginals[j])
                for j, v in enumerate(model.variables)}
    ub_duals = {v.name: sense * float(res.upper.marginals[j])
                for j, v in enumerate(model.variables)}
    return LpSolution(status="optimal", objective=sense * obj_min,
                      primal={v.name: float(x[j]) for j, v in enumerate(model.variables)},
                      duals=duals, lb_duals=lb_duals, ub_duals=ub_duals)


def solve_bip(model: MilpModel, time_limit: float | None = None) -> LpSolution:
    """Solve with integrality enforced.  Integer variables must sit in [0,1]."""
    if model.n_vars == 0:
        raise ValueError("model has no variables")
    for v in model.variables:
        if v.integer and not (0.0 <= v.lb and v.ub <= 1.0):
            raise ValueError(f"integer variable {v.name} must have bounds within [0,1]")
    sense = 1.0 if model.sense == "min" else -1.0
    c = sense * np.array([v.obj for v in model.variables])
    lo, hi = [], []
    for con in model.constraints:
        if con.rel == "=":
            lo.append(con.rhs)
            hi.append(con.rhs)
        elif con.rel == "<=":
            lo.append(-math.inf)
            hi.append(con.rhs)
        else:
            lo.append(con.rhs)
            hi.append(math.inf)
    constraints = []
    if model.constraints:
        A = _coo(model, model.constraints, [1.0] * len(model.constraints))
        constraints.append(LinearConstraint(A, np.array(lo), np.array(hi)))
    integrality = np.array([1 if v.integer else 0 for v in model.variables])
    bounds = Bounds(np.array([v.lb for v in model.variables]),
                    np.array([v.ub for v in model.variables]))
    # HiGHS defaults to a 1e-4 relative gap; callers compare objectives
    # against exhaustive enumeration, so demand proven optima.
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = _scipy_milp(c=c, constraints=constraints, integrality=integrality,
                      bounds=bounds, options=options)
    if res.status == 2:
        return LpSolution(status="infeasible")
    if res.status == 3:
        return LpSolution(status="unbounded")
    if res.status not in (0, 1):
        raise NumericalFailure(f"milp failed: {res.message}")
    status = "optimal" if res.status == 0 else "time_limit"
    if res.x is None:
        return LpSolution(status=status, mip_gap=getattr(res, "mip_gap", None))
    x = np.asarray(res.x)
    for j, v in enumerate(model.variables):
        if v.integer and abs(x[j] - round(x[j])) > EPS_INT:
            raise NumericalFailure(f"integer variable {v.name} ended at {x[j]!r}")
    return LpSolution(status=status, objective=sense * float(res.fun),
                      primal={v.name: float(x[j]) for j, v in enumerate(model.variables)},
                      mip_gap=getattr(res, "mip_gap", None))


def write_lp(model: MilpModel, path: str) -> None:
    """Dump the model in LP text format, for offline cross-checks."""
    lines = ["Minimize" if model.sense == "min" else "Maximize"]

    def term(c, name, first):
        s = f"{abs(c):.12g} {name}"
        if first:
            return s if c >= 0 else f"- {s}"
        return ("+ " if c >= 0 else "- ") + s

    terms = [(v.obj, v.name) for v in model.variables if v.obj != 0]
    if not terms and model.variables:
        terms = [(0.0, model.variables[0].name)]
    obj = " ".join(term(c, nm, k == 0) for k, (c, nm) in enumerate(terms))
    lines.append(" obj: " + obj)
    lines.append("Subject To")
    for con in model.constraints:
        lhs = " ".join(term(c, vn, k == 0) for k, (vn, c) in enumerate(con.coeffs))
        lines.append(f" {con.name}: {lhs} {con.rel} {con.rhs:.12g}")
    lines.append("Bounds")
    for v in model.variables:
        lo = "-inf" if v.lb == -math.inf else f"{v.lb:.12g}"
        hi = "+inf" if v.ub == math.inf else f"{v.ub:.12g}"
        lines.append(f" {lo} <= {v.name} <= {hi}")
    binaries = [v.name for v in model.variables if v.integer]
    if binaries:
        lines.append("Binary")
        lines.extend(f" {name}" for name in binaries)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
