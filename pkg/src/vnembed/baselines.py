"""Reference embedders: the exact link-flow MILP and a greedy heuristic.

vine_opt routes every virtual link freely over the augmented network with
one binary flow variable per directed arc, so the solver picks node mapping
and routing jointly and its objective lower-bounds any path-restricted
method run on the same substrate state.  gnmsp maps nodes greedily by a
residual-capacity score and routes links on fewest hops.
"""
from __future__ import annotations

import time
from collections import defaultdict, deque
from dataclasses import dataclass

from .milp import MilpModel, solve_bip
from .model import (
    AugmentedNetwork,
    Embedding,
    Rejection,
    SubstrateNetwork,
    VnRequest,
    build_augmented,
    candidate_set,
    embedding_objective,
    link_key,
    path_links,
    validate_embedding,
)
from .pathgen import NoPath, dijkstra_capacitated

# Meta links must never be the binding resource; they only exist so flow
# can enter and leave the substrate.
META_CAP_FACTOR = 10


@dataclass
class LinkFlowModel:
    """Binary link-flow formulation over the augmented network.

    Flows are binaries scaled by the owning virtual link's demand.  Each
    virtual link gets both directions of every live substrate link, meta
    arcs out of its first endpoint's candidates and into its second's;
    conservation needs direction, and restricting meta arcs to the two
    endpoints keeps zero-cost flow from detouring through other virtual
    nodes.  The index tables map variable names back for decoding.
    """

    model: MilpModel
    aug: AugmentedNetwork
    chi: dict       # meta link (i, u) -> chi var name
    src: dict       # virtual link -> {u: var} for arcs i -> u
    snk: dict       # virtual link -> {v: var} for arcs v -> j
    arcs: dict      # virtual link -> {(u, v): var}, directed substrate arcs

    @property
    def n_flow_vars(self) -> int:
        return sum(len(self.src[e]) + len(self.snk[e]) + len(self.arcs[e])
                   for e in self.arcs)


def build_link_flow(aug: AugmentedNetwork) -> LinkFlowModel:
    """Assemble the one-shot MILP on aug's substrate residuals."""
    sn, vn = aug.sn, aug.vn
    m = MilpModel("min", name="vineopt")
    chi = {}
    for i, u in aug.meta_links:
        chi[(i, u)] = m.add_var(f"chi[{i},{u}]", lb=0, ub=1,
                                obj=1.0 / sn.residual_cpu[u], integer=True)
    live = [l for l in sn.links if sn.residual_bw[l] > 0]
    mcap = META_CAP_FACTOR * max(sn.bw.values(), default=1)
    src, snk, arcs = {}, {}, {}
    for i, j in vn.links:
        d = vn.bw[(i, j)]
        src[(i, j)] = {u: m.add_var(f"fs[{i},{j},{u}]", lb=0, ub=1, integer=True)
                       for u in aug.candidates[i]}
        snk[(i, j)] = {v: m.add_var(f"ft[{i},{j},{v}]", lb=0, ub=1, integer=True)
                       for v in aug.candidates[j]}
        arcs[(i, j)] = {}
        for u, v in live:
            cost = d / sn.residual_bw[(u, v)]
            for a, b in ((u, v), (v, u)):
                arcs[(i, j)][(a, b)] = m.add_var(f"f[{i},{j},{a},{b}]",
                                                 lb=0, ub=1, obj=cost, integer=True)

    for i in sorted(aug.candidates):
        m.add_constr(f"vnode[{i}]", {chi[(i, u)]: 1.0 for u in aug.candidates[i]},
                     "=", 1.0)
    for u in range(sn.n_nodes):
        m.add_constr(f"snode[{u}]",
                     {chi[(i, u)]: 1.0 for i in aug.candidates
                      if u in aug.candidates[i]},
                     "<=", 1.0)

    for i, j in vn.links:
        d = vn.bw[(i, j)]
        # meta arcs open only where the node mapping lands
        for u, var in src[(i, j)].items():
            m.add_constr(f"cpl[{i},{j},{u},s]", {var: 1.0, chi[(i, u)]: -1.0},
                         "<=", 0.0)
        for v, var in snk[(i, j)].items():
            m.add_constr(f"cpl[{i},{j},{v},t]", {var: 1.0, chi[(j, v)]: -1.0},
                         "<=", 0.0)
        m.add_constr(f"src[{i},{j}]",
                     {var: 1.0 for var in src[(i, j)].values()}, "=", 1.0)
        m.add_constr(f"snk[{i},{j}]",
                     {var: 1.0 for var in snk[(i, j)].values()}, "=", 1.0)
        into, outof = defaultdict(list), defaultdict(list)
        for (a, b), var in arcs[(i, j)].items():
            outof[a].append(var)
            into[b].append(var)
        for w in range(sn.n_nodes):
            coeffs = {var: 1.0 for var in into[w]}
            coeffs.update({var: -1.0 for var in outof[w]})
            if w in src[(i, j)]:
                coeffs[src[(i, j)][w]] = 1.0
            if w in snk[(i, j)]:
                coeffs[snk[(i, j)][w]] = -1.0
            m.add_constr(f"flow[{i},{j},{w}]", coeffs, "=", 0.0)

    for u, v in sn.links:
        coeffs = {}
        for e in vn.links:
            d = vn.bw[e]
            if (u, v) in arcs[e]:
                coeffs[arcs[e][(u, v)]] = float(d)
                coeffs[arcs[e][(v, u)]] = float(d)
        m.add_constr(f"cap[{u},{v}]", coeffs, "<=", sn.residual_bw[(u, v)])
    for i, u in aug.meta_links:
        coeffs = {}
        for e in vn.links:
            if e[0] == i and u in src[e]:
                coeffs[src[e][u]] = float(vn.bw[e])
            if e[1] == i and u in snk[e]:
                coeffs[snk[e][u]] = float(vn.bw[e])
        m.add_constr(f"mcap[{i},{u}]", coeffs, "<=", mcap)
    return LinkFlowModel(m, aug, chi, src, snk, arcs)


def _walk(hot: set, s: int, t: int):
    """Follow arcs from s; the path, or None if hot is not exactly one."""
    out = defaultdict(list)
    for a, b in hot:
        out[a].append(b)
    path = [s]
    seen = {s}
    while path[-1] != t:
        step = out.get(path[-1], [])
        if len(step) != 1 or step[0] in seen:
            return None
        seen.add(step[0])
        path.append(step[0])
    if len(hot) != len(path) - 1:
        return None  # leftover arcs beside the walked path
    return path


def _bfs(hot: set, s: int, t: int):
    """Hop-shortest s..t path inside the positive-flow arcs."""
    out = defaultdict(list)
    for a, b in hot:
        out[a].append(b)
    prev = {s: None}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        if u == t:
            break
        for v in sorted(out[u]):
            if v not in prev:
                prev[v] = u
                queue.append(v)
    if t not in prev:
        return None
    path = []
    while t is not None:
        path.append(t)
        t = prev[t]
    return path[::-1]


def _decode(lfm: LinkFlowModel, sol, strict: bool) -> Embedding:
    """Turn a solution into an Embedding.

    At a proven optimum every commodity's positive arcs form exactly one
    simple path (positive arc costs rule out cycles), which _walk asserts.
    A time-limit incumbent may carry idle cycles; walking the hop-shortest
    route through its own arcs stays within the flow the capacity rows
    already paid for.
    """
    sn, vn = lfm.aug.sn, lfm.aug.vn
    x = sol.primal
    node_map = {}
    for (i, u), name in lfm.chi.items():
        if x[name] > 0.5:
            assert i not in node_map, "two candidates active for one virtual node"
            node_map[i] = u
    link_map = {}
    for e in vn.links:
        s, t = node_map[e[0]], node_map[e[1]]
        assert [u for u, nm in lfm.src[e].items() if x[nm] > 0.5] == [s]
        assert [v for v, nm in lfm.snk[e].items() if x[nm] > 0.5] == [t]
        hot = {arc for arc, nm in lfm.arcs[e].items() if x[nm] > 0.5}
        path = _walk(hot, s, t)
        if path is None:
            if strict:
                raise AssertionError(f"optimal flow for {e} is not a single path")
            path = _bfs(hot, s, t)
            assert path is not None, "incumbent flow disconnects its endpoints"
        link_map[e] = tuple(path)
    emb = Embedding(node_map, link_map)
    emb.objective_value = embedding_objective(sn, vn, emb)
    if strict:
        gap = abs(emb.objective_value - sol.objective)
        assert gap <= 1e-6 * max(1.0, abs(sol.objective)), \
            f"decoded objective drifted from the solver's by {gap}"
    validate_embedding(sn, vn, emb)
    return emb


def vine_opt(sn: SubstrateNetwork, vn: VnRequest, *,
             time_limit: float | None = None, diag: dict | None = None) -> Embedding:
    """Optimal one-shot embedding via the exact link-flow MILP.

    On a time limit the best incumbent is decoded and returned with its
    gap in diag; with no incumbent the request is rejected.
    """
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
        lfm = build_link_flow(aug)
        lap("build")
        sol = solve_bip(lfm.model, time_limit=time_limit)
        lap("solve")
        if sol.status == "infeasible":
            raise Rejection("vineopt", "link-flow model infeasible")
        if sol.status == "time_limit" and not sol.primal:
            raise Rejection("vineopt", "time limit hit before any incumbent")
        if sol.status not in ("optimal", "time_limit"):
            raise Rejection("vineopt", f"solver ended with status {sol.status}")
        emb = _decode(lfm, sol, strict=sol.status == "optimal")
        lap("decode")
    finally:
        if diag is not None:
            diag["stage_s"] = dict(stage_s)
    if diag is not None:
        diag["objective"] = emb.objective_value
        diag["status"] = sol.status
        diag["mip_gap"] = sol.mip_gap
    return emb


def gnmsp(sn: SubstrateNetwork, vn: VnRequest, *, diag: dict | None = None) -> Embedding:
    """Greedy node mapping plus hop-shortest routing.

    Virtual nodes in decreasing CPU demand order each take the unused
    candidate with the largest residual CPU times summed incident residual
    bandwidth.  Links then route one at a time on fewest hops; each
    consumes scratch bandwidth so later links see what earlier ones took.
    """
    t0 = time.perf_counter()
    node_map = {}
    used = set()
    for i in sorted(vn.nodes, key=lambda i: (-vn.cpu[i], i)):
        best = None
        for u in candidate_set(sn, vn, i):  # ascending, so ties keep the lowest id
            if u in used:
                continue
            h = sn.residual_cpu[u] * sum(sn.residual_bw[link_key(u, w)]
                                         for w in sn.adj[u])
            if best is None or h > best[0]:
                best = (h, u)
        if best is None:
            raise Rejection("gnmsp", f"no free candidate for virtual node {i}")
        node_map[i] = best[1]
        used.add(best[1])

    scratch = dict(sn.residual_bw)
    link_map = {}
    for e in vn.links:
        d = vn.bw[e]
        hop_cost = {l: 1.0 for l, r in scratch.items() if r >= d}
        try:
            path = dijkstra_capacitated(sn, node_map[e[0]], node_map[e[1]], d, hop_cost)
        except NoPath as exc:
            raise Rejection("gnmsp", f"virtual link {e}: {exc}") from exc
        for l in path_links(path):
            scratch[l] -= d
        link_map[e] = tuple(path)
    emb = Embedding(node_map, link_map)
    emb.objective_value = embedding_objective(sn, vn, emb)
    if diag is not None:
        diag["stage_s"] = {"greedy": time.perf_counter() - t0}
        diag["objective"] = emb.objective_value
    return emb
