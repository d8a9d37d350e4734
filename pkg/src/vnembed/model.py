"""Domain model: substrate networks, virtual network requests, embeddings.

Node CPU and link bandwidth are non-negative integers; node coordinates
live on a square grid.  All links are undirected and keyed by the
canonical (low, high) node pair.  Substrate residuals change only
through allocate()/release(), which keep an internal registry of live
embeddings so that releases can be checked against what was actually
allocated.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


class Rejection(Exception):
    """Request cannot be embedded.  Carries the stage that gave up."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


class InvalidEmbedding(ValueError):
    """Embedding is structurally broken (bad ids, non-path, wrong endpoints)."""


class InfeasibleAllocation(Exception):
    """Embedding does not fit in the current residual capacities."""


class DoubleRelease(Exception):
    """release() called for an embedding that is not currently allocated."""


def link_key(u: int, v: int) -> tuple[int, int]:
    if u == v:
        raise ValueError(f"self loop at node {u}")
    return (u, v) if u < v else (v, u)


def path_links(nodes) -> list[tuple[int, int]]:
    """Canonical link keys along a node sequence."""
    return [link_key(a, b) for a, b in zip(nodes, nodes[1:])]


class SubstrateNetwork:
    """Undirected substrate graph with CPU/bandwidth capacities and residuals.

    nodes: iterable of (id, cpu, x, y); ids must be dense 0..n-1.
    links: iterable of (u, v, bw).
    """

    def __init__(self, nodes, links):
        nodes = list(nodes)
        ids = sorted(n[0] for n in nodes)
        if ids != list(range(len(nodes))):
            raise ValueError("node ids must be dense 0..n-1")
        n = len(nodes)
        self.n_nodes = n
        self.cpu = [0] * n
        self.x = [0.0] * n
        self.y = [0.0] * n
        for nid, cpu, x, y in nodes:
            if cpu < 0:
                raise ValueError(f"negative cpu at node {nid}")
            self.cpu[nid] = int(cpu)
            self.x[nid] = float(x)
            self.y[nid] = float(y)
        self.bw: dict[tuple[int, int], int] = {}
        self.adj: dict[int, list[int]] = {u: [] for u in range(n)}
        for u, v, bw in links:
            key = link_key(u, v)
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"link {key} references unknown node")
            if key in self.bw:
                raise ValueError(f"duplicate link {key}")
            if bw < 0:
                raise ValueError(f"negative bandwidth on link {key}")
            self.bw[key] = int(bw)
            self.adj[key[0]].append(key[1])
            self.adj[key[1]].append(key[0])
        for u in self.adj:
            self.adj[u].sort()
        self.links = sorted(self.bw)
        self.residual_cpu = list(self.cpu)
        self.residual_bw = dict(self.bw)
        # id(embedding) -> (vn, embedding), maintained by allocate/release
        self._live: dict[int, tuple] = {}

    @property
    def nodes(self):
        return range(self.n_nodes)

    def neighbors(self, u: int) -> list[int]:
        return self.adj[u]

    def total_cpu(self) -> int:
        return sum(self.cpu)

    def total_bw(self) -> int:
        return sum(self.bw.values())

    def live_embeddings(self) -> list[tuple]:
        return list(self._live.values())

    def extent(self) -> float:
        """Side length of the smallest origin-anchored square holding all nodes."""
        if self.n_nodes == 0:
            return 0.0
        return max(max(self.x), max(self.y))

    def copy(self) -> "SubstrateNetwork":
        """Deep copy of capacities and residuals.  Live registry is not carried over."""
        sn = SubstrateNetwork(
            [(u, self.cpu[u], self.x[u], self.y[u]) for u in self.nodes],
            [(u, v, self.bw[(u, v)]) for (u, v) in self.links],
        )
        sn.residual_cpu = list(self.residual_cpu)
        sn.residual_bw = dict(self.residual_bw)
        return sn

    def to_dict(self) -> dict:
        return {
            "nodes": [[u, self.cpu[u], self.x[u], self.y[u]] for u in self.nodes],
            "links": [[u, v, self.bw[(u, v)]] for (u, v) in self.links],
            "residual_cpu": list(self.residual_cpu),
            "residual_bw": [[u, v, self.residual_bw[(u, v)]] for (u, v) in self.links],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubstrateNetwork":
        sn = cls(d["nodes"], d["links"])
        if "residual_cpu" in d:
            sn.residual_cpu = [int(c) for c in d["residual_cpu"]]
        if "residual_bw" in d:
            sn.residual_bw = {link_key(u, v): int(b) for u, v, b in d["residual_bw"]}
        return sn


class VnRequest:
    """Virtual network request: connected graph with demands and location boxes.

    nodes: iterable of (id, cpu, x, y, dev); links: iterable of (i, j, bw).
    arrival_time/lifetime are simulation timestamps in abstract time units.
    """

    def __init__(self, nodes, links, arrival_time: float = 0.0, lifetime: float = 0.0):
        nodes = list(nodes)
        ids = sorted(n[0] for n in nodes)
        if ids != list(range(len(nodes))):
            raise ValueError("virtual node ids must be dense 0..n-1")
        n = len(nodes)
        self.n_nodes = n
        self.cpu = [0] * n
        self.x = [0.0] * n
        self.y = [0.0] * n
        self.dev = [0.0] * n
        for nid, cpu, x, y, dev in nodes:
            if cpu <= 0:
                raise ValueError(f"virtual node {nid} needs a positive cpu demand")
            if dev < 0:
                raise ValueError(f"negative deviation at virtual node {nid}")
            self.cpu[nid] = int(cpu)
            self.x[nid] = float(x)
            self.y[nid] = float(y)
            self.dev[nid] = float(dev)
        self.bw: dict[tuple[int, int], int] = {}
        self.adj: dict[int, list[int]] = {i: [] for i in range(n)}
        for i, j, bw in links:
            key = link_key(i, j)
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"virtual link {key} references unknown node")
            if key in self.bw:
                raise ValueError(f"duplicate virtual link {key}")
            if bw <= 0:
                raise ValueError(f"virtual link {key} needs a positive bandwidth demand")
            self.bw[key] = int(bw)
            self.adj[key[0]].append(key[1])
            self.adj[key[1]].append(key[0])
        for i in self.adj:
            self.adj[i].sort()
        self.links = sorted(self.bw)
        self.arrival_time = float(arrival_time)
        self.lifetime = float(lifetime)
        if n > 1 and not self._connected():
            raise ValueError("virtual network must be connected")

    def _connected(self) -> bool:
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in self.adj[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.n_nodes

    @property
    def nodes(self):
        return range(self.n_nodes)

    def to_dict(self) -> dict:
        return {
            "nodes": [[i, self.cpu[i], self.x[i], self.y[i], self.dev[i]] for i in self.nodes],
            "links": [[i, j, self.bw[(i, j)]] for (i, j) in self.links],
            "arrival_time": self.arrival_time,
            "lifetime": self.lifetime,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VnRequest":
        return cls(d["nodes"], d["links"], d.get("arrival_time", 0.0), d.get("lifetime", 0.0))


@dataclass
class Embedding:
    """Node map plus one substrate path (node sequence) per virtual link.

    The path for canonical virtual link (i, j) runs from node_map[i] to
    node_map[j].  objective_value is whatever the producing embedder
    optimized; comparable only between embedders using the same functional.
    """

    node_map: dict[int, int]
    link_map: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)
    objective_value: float = 0.0


def candidate_set(sn: SubstrateNetwork, vn: VnRequest, i: int) -> list[int]:
    """Substrate nodes with enough residual CPU inside virtual node i's location box.

    The box constraint holds per coordinate: |x_u - x_i| <= dev and
    |y_u - y_i| <= dev.
    """
    cpu = vn.cpu[i]
    xi, yi, dev = vn.x[i], vn.y[i], vn.dev[i]
    out = []
    for u in range(sn.n_nodes):
        if (sn.residual_cpu[u] >= cpu
                and abs(sn.x[u] - xi) <= dev
                and abs(sn.y[u] - yi) <= dev):
            out.append(u)
    return out


class AugmentedNetwork:
    """Substrate plus meta-links joining each virtual node to its candidates."""

    def __init__(self, sn: SubstrateNetwork, vn: VnRequest, candidates: dict[int, list[int]]):
        self.sn = sn
        self.vn = vn
        self.candidates = candidates
        self.meta_links = [(i, u) for i in sorted(candidates) for u in candidates[i]]


def build_augmented(sn: SubstrateNetwork, vn: VnRequest) -> AugmentedNetwork:
    """Compute all candidate sets; reject as soon as one comes up empty."""
    candidates = {}
    for i in vn.nodes:
        cands = candidate_set(sn, vn, i)
        if not cands:
            raise Rejection("augment", f"virtual node {i} has no candidate substrate node")
        candidates[i] = cands
    return AugmentedNetwork(sn, vn, candidates)


def validate_embedding(sn: SubstrateNetwork, vn: VnRequest, emb: Embedding,
                       check_capacity: bool = True) -> None:
    """Raise unless emb is a structurally valid (and optionally fitting) embedding.

    Structural: node map is total and injective, targets respect location
    boxes, every virtual link has a simple substrate path with matching
    endpoints.  Capacity: aggregated demands fit in current residuals
    (InfeasibleAllocation if not).
    """
    if set(emb.node_map) != set(vn.nodes):
        raise InvalidEmbedding("node map must cover exactly the virtual nodes")
    targets = list(emb.node_map.values())
    for u in targets:
        if not (0 <= u < sn.n_nodes):
            raise InvalidEmbedding(f"unknown substrate node {u}")
    if len(set(targets)) != len(targets):
        raise InvalidEmbedding("two virtual nodes mapped to one substrate node")
    for i, u in emb.node_map.items():
        if abs(sn.x[u] - vn.x[i]) > vn.dev[i] or abs(sn.y[u] - vn.y[i]) > vn.dev[i]:
            raise InvalidEmbedding(f"virtual node {i} placed outside its location box")
    if set(emb.link_map) != set(vn.links):
        raise InvalidEmbedding("link map must cover exactly the virtual links")
    for (i, j), seq in emb.link_map.items():
        if len(seq) < 2:
            raise InvalidEmbedding(f"path for virtual link ({i},{j}) too short")
        if len(set(seq)) != len(seq):
            raise InvalidEmbedding(f"path for virtual link ({i},{j}) revisits a node")
        if seq[0] != emb.node_map[i] or seq[-1] != emb.node_map[j]:
            raise InvalidEmbedding(f"path endpoints for virtual link ({i},{j}) do not match node map")
        for l in path_links(seq):
            if l not in sn.bw:
                raise InvalidEmbedding(f"path for virtual link ({i},{j}) uses missing link {l}")
    if check_capacity:
        need_cpu, need_bw = _aggregate_demands(vn, emb)
        for u, need in need_cpu.items():
            if need > sn.residual_cpu[u]:
                raise InfeasibleAllocation(f"cpu shortfall at substrate node {u}")
        for l, need in need_bw.items():
            if need > sn.residual_bw[l]:
                raise InfeasibleAllocation(f"bandwidth shortfall on link {l}")


def _aggregate_demands(vn: VnRequest, emb: Embedding):
    need_cpu: dict[int, int] = {}
    need_bw: dict[tuple[int, int], int] = {}
    for i, u in emb.node_map.items():
        need_cpu[u] = need_cpu.get(u, 0) + vn.cpu[i]
    for vlink, seq in emb.link_map.items():
        d = vn.bw[vlink]
        for l in path_links(seq):
            need_bw[l] = need_bw.get(l, 0) + d
    return need_cpu, need_bw


def allocate(sn: SubstrateNetwork, vn: VnRequest, emb: Embedding) -> None:
    """Atomically subtract emb's demands from sn's residuals.

    Validates first; on any failure the residuals are left untouched.
    """
    if id(emb) in sn._live:
        raise InfeasibleAllocation("embedding is already allocated")
    validate_embedding(sn, vn, emb, check_capacity=True)
    need_cpu, need_bw = _aggregate_demands(vn, emb)
    for u, need in need_cpu.items():
        sn.residual_cpu[u] -= need
    for l, need in need_bw.items():
        sn.residual_bw[l] -= need
    sn._live[id(emb)] = (vn, emb)


def release(sn: SubstrateNetwork, vn: VnRequest, emb: Embedding) -> None:
    """Return emb's demands to sn's residuals.  Exact inverse of allocate."""
    if id(emb) not in sn._live:
        raise DoubleRelease("embedding is not currently allocated")
    need_cpu, need_bw = _aggregate_demands(vn, emb)
    for u, need in need_cpu.items():
        sn.residual_cpu[u] += need
    for l, need in need_bw.items():
        sn.residual_bw[l] += need
    del sn._live[id(emb)]


def verify_conservation(sn: SubstrateNetwork) -> None:
    """Check residual = capacity - sum of live demands, for every node and link."""
    exp_cpu = list(sn.cpu)
    exp_bw = dict(sn.bw)
    for vn, emb in sn._live.values():
        need_cpu, need_bw = _aggregate_demands(vn, emb)
        for u, need in need_cpu.items():
            exp_cpu[u] -= need
        for l, need in need_bw.items():
            exp_bw[l] -= need
    if exp_cpu != sn.residual_cpu:
        raise AssertionError("cpu residuals out of sync with live embeddings")
    if exp_bw != sn.residual_bw:
        raise AssertionError("bandwidth residuals out of sync with live embeddings")
    for u in sn.nodes:
        if not (0 <= sn.residual_cpu[u] <= sn.cpu[u]):
            raise AssertionError(f"cpu residual out of range at node {u}")
    for l in sn.links:
        if not (0 <= sn.residual_bw[l] <= sn.bw[l]):
            raise AssertionError(f"bandwidth residual out of range on link {l}")


def embedding_objective(sn: SubstrateNetwork, vn: VnRequest, emb: Embedding) -> float:
    """Load-balance objective of emb against sn's current residuals.

    Sum over virtual links of demand times sum of inverse residual
    bandwidths along the path, plus sum over virtual nodes of inverse
    residual CPU at the hosting node.  Evaluate before allocating.
    """
    total = 0.0
    for vlink, seq in emb.link_map.items():
        d = vn.bw[vlink]
        for l in path_links(seq):
            total += d / sn.residual_bw[l]
    for i, u in emb.node_map.items():
        total += 1.0 / sn.residual_cpu[u]
    return total
