"""Path-generation embedding pipeline.

A request is embedded in stages: candidate sets and meta-links come from
the model module; a weighted-average node mapping picks initial hosts;
Dijkstra builds one initial path per virtual link; dual prices of the
restricted relaxation drive a pricing sweep over all candidate end-node
combinations; and the enlarged path pool goes into a binary restricted
master whose solution decodes into an Embedding.

Flow variables are binaries y_p scaled by the link demand (an
unsplittable flow either carries all of D_ij along p or nothing), so
capacity rows read sum(D_ij * y_p) <= residual.
"""

from __future__ import annotations

import heapq
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field

from . import milp
from .model import (
    AugmentedNetwork,
    Embedding,
    Rejection,
    SubstrateNetwork,
    VnRequest,
    build_augmented,
    link_key,
    path_links,
)


# capacity-price bound for the elastic fallback; far above any 1/residual
# routing cost, so a link priced at the cap is avoided whenever possible
ELASTIC_GAMMA_CAP = 1e4


class IsolatedNode(Exception):
    """Weighted averages are undefined for a node without incident links."""


class NodeMapInfeasible(Exception):
    """No injective node assignment exists within the candidate sets."""


class NoPath(Exception):
    """Endpoints are disconnected in the capacity-filtered subgraph."""


class MissingPaths(Exception):
    """The path pool leaves some virtual link without any column."""


class DualInfeasible(Exception):
    """The restricted relaxation is infeasible, so prices are undefined."""


@dataclass(frozen=True)
class AugPath:
    """One candidate mapping of a virtual link: meta entry, substrate path, meta exit."""

    virtual_link: tuple[int, int]        # canonical (i, j), i < j
    entry_meta: tuple[int, int]          # (i, u)
    exit_meta: tuple[int, int]           # (j, v)
    substrate_path: tuple[int, ...]      # simple node sequence u .. v

    def substrate_links(self) -> list[tuple[int, int]]:
        return path_links(self.substrate_path)


@dataclass
class DualPrices:
    """Prices of the restricted relaxation (lam is the per-virtual-node price).

    sigma/tau are aggregated to meta-links by summing the per-path values;
    the raw per-path vectors are kept alongside for feasibility audits.
    """

    lam: dict
    mu: dict
    eta: dict
    gamma: dict
    sigma: dict
    tau: dict
    sigma_per_path: list = field(default_factory=list)
    tau_per_path: list = field(default_factory=list)
    objective: float = 0.0


@dataclass
class NodeWeights:
    w_virtual: dict
    w_substrate: dict


@dataclass(frozen=True)
class PricedPath:
    """Shortest path for one end-node combination, with its price split out."""

    nodes: tuple
    dual_length: float       # sigma + per-link gamma along the path + tau
    inv_cap_length: float    # sum of 1/residual_bw along the path

    @property
    def total(self) -> float:
        return self.dual_length + self.inv_cap_length


def weight_virtual(i: int, vn: VnRequest) -> float:
    """Demand-weighted average of the demands on i's incident virtual links."""
    demands = [vn.bw[link_key(i, j)] for j in vn.adj[i]]
    if not demands:
        raise IsolatedNode(f"virtual node {i} has no incident links")
    return sum(d * d for d in demands) / sum(demands)


def weight_substrate(u: int, sn: SubstrateNetwork) -> float:
    """Capacity-weighted average of residual bandwidth on u's incident links.

    Zero when every incident link is drained; such a node cannot carry
    any virtual link and is skipped by the node mapping.
    """
    avail = [sn.residual_bw[link_key(u, v)] for v in sn.adj[u]]
    if not avail:
        raise IsolatedNode(f"substrate node {u} has no incident links")
    total = sum(avail)
    if total == 0:
        return 0.0
    return sum(a * a for a in avail) / total


def compute_weights(aug: AugmentedNetwork) -> NodeWeights:
    w_virtual = {i: weight_virtual(i, aug.vn) for i in aug.vn.nodes}
    used = sorted({u for cands in aug.candidates.values() for u in cands})
    w_substrate = {u: weight_substrate(u, aug.sn) for u in used}
    return NodeWeights(w_virtual, w_substrate)


def solve_lp_n(aug: AugmentedNetwork, weights: NodeWeights) -> dict[int, int]:
    """Injective node mapping minimizing sum of W_i/W_u over chosen pairs."""
    m = milp.MilpModel(name="nodemap")
    for i in sorted(aug.candidates):
        usable = 0
        for u in aug.candidates[i]:
            w_u = weights.w_substrate.get(u, 0.0)
            if w_u <= 0.0:
                continue
            m.add_var(f"chi[{i},{u}]", ub=1.0, obj=weights.w_virtual[i] / w_u,
                      integer=True)
            usable += 1
        if usable == 0:
            raise NodeMapInfeasible(f"virtual node {i} has no usable candidate")
    for i in sorted(aug.candidates):
        coeffs = {f"chi[{i},{u}]": 1.0 for u in aug.candidates[i]
                  if m.has_var(f"chi[{i},{u}]")}
        m.add_constr(f"assign[{i}]", coeffs, "=", 1.0)
    used = sorted({u for cands in aug.candidates.values() for u in cands})
    for u in used:
        coeffs = {f"chi[{i},{u}]": 1.0 for i in aug.candidates
                  if m.has_var(f"chi[{i},{u}]")}
        if coeffs:
            m.add_constr(f"used[{u}]", coeffs, "<=", 1.0)
    sol = milp.solve_bip(m)
    if sol.status == "infeasible":
        raise NodeMapInfeasible("no injective assignment within candidate sets")
    if sol.status != "optimal":
        raise milp.NumericalFailure(f"node mapping ended with status {sol.status}")
    node_map = {}
    for i in aug.candidates:
        for u in aug.candidates[i]:
            if sol.primal.get(f"chi[{i},{u}]", 0.0) > 0.5:
                node_map[i] = u
    return node_map


def _dijkstra_multi(sn, s, demand, link_cost, targets):
    """Shortest paths from s to each target over links with enough residual.

    Links absent from link_cost are unusable.  Label order is
    (cost, hops, node sequence), so equal-cost ties resolve to fewer
    hops and then the lexicographically smallest path.
    """
    want = set(targets)
    found = {}
    settled = set()
    heap = [(0.0, 0, (s,))]
    while heap and want:
        cost, hops, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u in want:
            found[u] = list(path)
            want.discard(u)
            if not want:
                break
        for v in sn.adj[u]:
            if v in settled or v in path:
                continue
            key = (u, v) if u < v else (v, u)
            cost_v = link_cost.get(key)
            if cost_v is None or sn.residual_bw[key] < demand:
                continue
            heapq.heappush(heap, (cost + cost_v, hops + 1, path + (v,)))
    return found


def dijkstra_capacitated(sn: SubstrateNetwork, s: int, t: int, demand: int,
                         link_cost: dict) -> list[int]:
    """Minimum-cost simple path s..t among links with residual_bw >= demand."""
    if s == t:
        raise ValueError("endpoints must differ")
    found = _dijkstra_multi(sn, s, demand, link_cost, (t,))
    if t not in found:
        raise NoPath(f"no capacity-feasible path {s} -> {t}")
    return found[t]


def _inverse_residual_costs(sn: SubstrateNetwork, gamma: dict | None = None) -> dict:
    """Per-link routing costs; drained links drop out instead of dividing by zero."""
    costs = {}
    for l in sn.links:
        a = sn.residual_bw[l]
        if a > 0:
            costs[l] = 1.0 / a + (gamma.get(l, 0.0) if gamma else 0.0)
    return costs


def init_sol(aug: AugmentedNetwork, vn: VnRequest) -> list[AugPath]:
    """Initial pool: weighted node mapping plus one shortest path per virtual link."""
    weights = compute_weights(aug)
    try:
        node_map = solve_lp_n(aug, weights)
    except NodeMapInfeasible as exc:
        raise Rejection("nodemap", str(exc)) from exc
    costs = _inverse_residual_costs(aug.sn)
    pool = []
    for (i, j) in vn.links:
        try:
            seq = dijkstra_capacitated(aug.sn, node_map[i], node_map[j],
                                       vn.bw[(i, j)], costs)
        except NoPath as exc:
            raise Rejection("initpath",
                            f"no capacity-feasible path for virtual link ({i},{j})") from exc
        pool.append(AugPath((i, j), (i, node_map[i]), (j, node_map[j]), tuple(seq)))
    return pool


def build_primal(aug: AugmentedNetwork, vn: VnRequest, pool: list[AugPath]) -> milp.MilpModel:
    """Restricted master over the path pool, as a pure binary model.

    Rows: one mapping row per virtual node, one exclusivity row per
    substrate node, one demand row per virtual link, one capacity row per
    substrate link, and entry/exit coupling rows per path.
    """
    by_vlink = defaultdict(list)
    for k, p in enumerate(pool):
        by_vlink[p.virtual_link].append(k)
    for vl in vn.links:
        if not by_vlink[vl]:
            raise MissingPaths(f"virtual link {vl} has no path in the pool")
    sn = aug.sn
    m = milp.MilpModel(name="restricted-master")
    for i in sorted(aug.candidates):
        for u in aug.candidates[i]:
            m.add_var(f"chi[{i},{u}]", ub=1.0, obj=1.0 / sn.residual_cpu[u],
                      integer=True)
    for k, p in enumerate(pool):
        d = vn.bw[p.virtual_link]
        inv = sum(1.0 / sn.residual_bw[l] for l in p.substrate_links())
        m.add_var(f"y[{k}]", ub=1.0, obj=d * inv, integer=True)
    for i in sorted(aug.candidates):
        m.add_constr(f"vnode[{i}]",
                     {f"chi[{i},{u}]": 1.0 for u in aug.candidates[i]}, "=", 1.0)
    members = defaultdict(set)
    for i, cands in aug.candidates.items():
        for u in cands:
            members[u].add(i)
    for u in sn.nodes:
        m.add_constr(f"snode[{u}]",
                     {f"chi[{i},{u}]": 1.0 for i in sorted(members[u])}, "<=", 1.0)
    for (i, j) in vn.links:
        m.add_constr(f"vdem[{i},{j}]",
                     {f"y[{k}]": 1.0 for k in by_vlink[(i, j)]}, "=", 1.0)
    cap_coeffs = {l: {} for l in sn.links}
    for k, p in enumerate(pool):
        d = float(vn.bw[p.virtual_link])
        for l in p.substrate_links():
            cap_coeffs[l][f"y[{k}]"] = d
    for l in sn.links:
        m.add_constr(f"cap[{l[0]},{l[1]}]", cap_coeffs[l], "<=",
                     float(sn.residual_bw[l]))
    for k, p in enumerate(pool):
        i, u = p.entry_meta
        j, v = p.exit_meta
        m.add_constr(f"entry[{k}]", {f"y[{k}]": 1.0, f"chi[{i},{u}]": -1.0}, "<=", 0.0)
        m.add_constr(f"exit[{k}]", {f"y[{k}]": 1.0, f"chi[{j},{v}]": -1.0}, "<=", 0.0)
    m._decode = (aug, vn, list(pool))
    return m


def solve_restricted_primal(model: milp.MilpModel,
                            time_limit: float | None = None) -> Embedding:
    """Solve the master and decode the chosen paths/hosts into an Embedding."""
    aug, vn, pool = model._decode
    sol = milp.solve_bip(model, time_limit=time_limit)
    if sol.status == "infeasible":
        raise Rejection("primal", "restricted master has no integral solution")
    if sol.status == "time_limit":
        gap = "unknown" if sol.mip_gap is None else f"{sol.mip_gap:.3g}"
        raise Rejection("primal", f"time limit reached (incumbent gap {gap})")
    node_map = {}
    for i in aug.candidates:
        for u in aug.candidates[i]:
            if sol.primal[f"chi[{i},{u}]"] > 0.5:
                node_map[i] = u
    link_map = {}
    for k, p in enumerate(pool):
        if sol.primal[f"y[{k}]"] > 0.5:
            link_map[p.virtual_link] = p.substrate_path
    return Embedding(node_map=node_map, link_map=link_map,
                     objective_value=float(sol.objective))


def solve_dual(aug: AugmentedNetwork, vn: VnRequest, pool: list[AugPath],
               gamma_cap: float | None = None) -> DualPrices:
    """Prices from the explicit dual of the restricted relaxation.

    One variable per primal row (per-path coupling rows give per-path
    sigma/tau, summed into meta-link tables); one constraint per primal
    column.  Maximization of lam + demand-weighted mu minus eta/gamma
    penalties.

    gamma_cap bounds the capacity prices, which on the primal side turns
    the capacity rows elastic (overuse allowed at gamma_cap per unit).
    The capped dual stays bounded when the pool's paths conflict only on
    capacity, so it prices pools whose exact relaxation is infeasible.
    """
    sn = aug.sn
    entry_paths = defaultdict(list)
    exit_paths = defaultdict(list)
    for k, p in enumerate(pool):
        entry_paths[p.entry_meta].append(k)
        exit_paths[p.exit_meta].append(k)
    m = milp.MilpModel(sense="max", name="prices")
    for i in sorted(aug.candidates):
        m.add_var(f"lam[{i}]", lb=-math.inf, obj=1.0)
    for (i, j) in vn.links:
        m.add_var(f"mu[{i},{j}]", lb=-math.inf, obj=float(vn.bw[(i, j)]))
    for u in sn.nodes:
        m.add_var(f"eta[{u}]", obj=-1.0)
    for a, b in sn.links:
        m.add_var(f"gamma[{a},{b}]", obj=-float(sn.residual_bw[(a, b)]),
                  ub=math.inf if gamma_cap is None else gamma_cap)
    for k in range(len(pool)):
        m.add_var(f"sigma[{k}]")
        m.add_var(f"tau[{k}]")
    for i in sorted(aug.candidates):
        for u in aug.candidates[i]:
            coeffs = {f"lam[{i}]": 1.0, f"eta[{u}]": -1.0}
            for k in entry_paths[(i, u)]:
                coeffs[f"sigma[{k}]"] = float(vn.bw[pool[k].virtual_link])
            for k in exit_paths[(i, u)]:
                coeffs[f"tau[{k}]"] = float(vn.bw[pool[k].virtual_link])
            m.add_constr(f"meta[{i},{u}]", coeffs, "<=", 1.0 / sn.residual_cpu[u])
    for k, p in enumerate(pool):
        i, j = p.virtual_link
        links = p.substrate_links()
        coeffs = {f"mu[{i},{j}]": 1.0, f"sigma[{k}]": -1.0, f"tau[{k}]": -1.0}
        for a, b in links:
            coeffs[f"gamma[{a},{b}]"] = -1.0
        rhs = sum(1.0 / sn.residual_bw[l] for l in links)
        m.add_constr(f"path[{k}]", coeffs, "<=", rhs)
    sol = milp.solve_lp(m)
    if sol.status != "optimal":
        # prices maximize over a cone containing 0, so they cannot be
        # infeasible; unbounded means the restricted primal has no solution
        raise DualInfeasible("restricted relaxation is infeasible")
    lam = {i: sol.primal[f"lam[{i}]"] for i in aug.candidates}
    mu = {(i, j): sol.primal[f"mu[{i},{j}]"] for (i, j) in vn.links}
    eta = {u: sol.primal[f"eta[{u}]"] for u in sn.nodes}
    gamma = {l: sol.primal[f"gamma[{l[0]},{l[1]}]"] for l in sn.links}
    sigma_pp = [sol.primal[f"sigma[{k}]"] for k in range(len(pool))]
    tau_pp = [sol.primal[f"tau[{k}]"] for k in range(len(pool))]
    sigma = {meta: 0.0 for meta in aug.meta_links}
    tau = {meta: 0.0 for meta in aug.meta_links}
    for k, p in enumerate(pool):
        sigma[p.entry_meta] += sigma_pp[k]
        tau[p.exit_meta] += tau_pp[k]
    return DualPrices(lam=lam, mu=mu, eta=eta, gamma=gamma, sigma=sigma, tau=tau,
                      sigma_per_path=sigma_pp, tau_per_path=tau_pp,
                      objective=float(sol.objective))


def relaxed_primal_duals(model: milp.MilpModel) -> DualPrices:
    """Same prices read off the relaxed restricted master's row duals.

    The y rows are scaled by demand relative to flow form, so mu and the
    per-path sigma/tau divide by D_ij; binary upper bounds are lifted
    (each is implied by a row) so no dual weight hides on bounds.
    """
    aug, vn, pool = model._decode
    rel = milp.relax(model, lift_upper=[v.name for v in model.variables])
    sol = milp.solve_lp(rel)
    if sol.status != "optimal":
        raise DualInfeasible("restricted relaxation is infeasible")
    lam = {i: sol.duals[f"vnode[{i}]"] for i in aug.candidates}
    eta = {u: -sol.duals[f"snode[{u}]"] for u in aug.sn.nodes}
    mu = {(i, j): sol.duals[f"vdem[{i},{j}]"] / vn.bw[(i, j)]
          for (i, j) in vn.links}
    gamma = {l: -sol.duals[f"cap[{l[0]},{l[1]}]"] for l in aug.sn.links}
    sigma_pp, tau_pp = [], []
    for k, p in enumerate(pool):
        d = vn.bw[p.virtual_link]
        sigma_pp.append(-sol.duals[f"entry[{k}]"] / d)
        tau_pp.append(-sol.duals[f"exit[{k}]"] / d)
    sigma = {meta: 0.0 for meta in aug.meta_links}
    tau = {meta: 0.0 for meta in aug.meta_links}
    for k, p in enumerate(pool):
        sigma[p.entry_meta] += sigma_pp[k]
        tau[p.exit_meta] += tau_pp[k]
    return DualPrices(lam=lam, mu=mu, eta=eta, gamma=gamma, sigma=sigma, tau=tau,
                      sigma_per_path=sigma_pp, tau_per_path=tau_pp,
                      objective=float(sol.objective))


def price_virtual_link(aug: AugmentedNetwork, vn: VnRequest,
                       vlink: tuple[int, int], prices: DualPrices) -> dict:
    """Shortest priced path for every end-node combination of one virtual link.

    Per-link routing cost is gamma + 1/residual; the fixed entry/exit
    prices are added afterwards.  Combinations with no feasible path are
    left out.
    """
    sn = aug.sn
    i, j = vlink
    demand = vn.bw[vlink]
    costs = _inverse_residual_costs(sn, prices.gamma)
    out = {}
    for u in aug.candidates[i]:
        targets = [v for v in aug.candidates[j] if v != u]
        if not targets:
            continue
        found = _dijkstra_multi(sn, u, demand, costs, targets)
        for v, seq in found.items():
            links = path_links(seq)
            g = sum(prices.gamma.get(l, 0.0) for l in links)
            inv = sum(1.0 / sn.residual_bw[l] for l in links)
            dual_len = prices.sigma.get((i, u), 0.0) + g + prices.tau.get((j, v), 0.0)
            out[(u, v)] = PricedPath(tuple(seq), dual_len, inv)
    return out


def price_paths(aug: AugmentedNetwork, vn: VnRequest, prices: DualPrices,
                exclude=()) -> list[AugPath]:
    """One pricing sweep: all end-node combinations for every virtual link.

    Every found path joins the pool unless an identical path (same
    virtual link, same node sequence) is already there.
    """
    known = {(p.virtual_link, p.substrate_path) for p in exclude}
    out = []
    for vlink in vn.links:
        priced = price_virtual_link(aug, vn, vlink, prices)
        for (u, v) in sorted(priced):
            seq = priced[(u, v)].nodes
            if (vlink, seq) in known:
                continue
            known.add((vlink, seq))
            out.append(AugPath(vlink, (vlink[0], u), (vlink[1], v), seq))
    return out


def final_sol(sn: SubstrateNetwork, vn: VnRequest, *, iterations: int = 1,
              time_limit: float | None = None, diag: dict | None = None) -> Embedding:
    """Full pipeline; one pricing round by default.

    A request is rejected when a candidate set is empty, no injective node
    assignment exists, an initial path is missing, or the final master is
    infeasible.  An infeasible restricted relaxation alone does not reject:
    the sweep prices the pool elastically instead.

    diag, when given, collects per-stage wall times, pool sizes, the last
    prices, and the final objective.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    stage_s = defaultdict(float)
    t0 = time.perf_counter()

    def lap(stage):
        nonlocal t0
        now = time.perf_counter()
        stage_s[stage] += now - t0
        t0 = now

    try:
        aug = build_augmented(sn, vn)
        lap("augment")
        pool = init_sol(aug, vn)
        lap("init")
        if diag is not None:
            diag["pool_init"] = len(pool)
        prices = None
        for _ in range(iterations):
            try:
                prices = solve_dual(aug, vn, pool)
            except DualInfeasible:
                # initial paths picked link by link can conflict on shared
                # capacity, leaving the restricted relaxation without a
                # solution; capped capacity prices make oversubscribed
                # links expensive, the sweep routes around them, and only
                # the enlarged master decides rejection
                prices = solve_dual(aug, vn, pool, gamma_cap=ELASTIC_GAMMA_CAP)
            lap("dual")
            pool = pool + price_paths(aug, vn, prices, exclude=pool)
            lap("price")
        model = build_primal(aug, vn, pool)
        lap("build")
        emb = solve_restricted_primal(model, time_limit=time_limit)
        lap("primal")
    finally:
        if diag is not None:
            diag["stage_s"] = dict(stage_s)
    if diag is not None:
        diag["pool_final"] = len(pool)
        diag["objective"] = emb.objective_value
        if prices is not None:
            diag["prices"] = {
                "lam": {str(k): v for k, v in prices.lam.items()},
                "mu": {str(k): v for k, v in prices.mu.items()},
                "eta": {str(k): v for k, v in prices.eta.items()},
                "gamma": {str(k): v for k, v in prices.gamma.items()},
                "sigma": {str(k): v for k, v in prices.sigma.items()},
                "tau": {str(k): v for k, v in prices.tau.items()},
            }
    return emb
