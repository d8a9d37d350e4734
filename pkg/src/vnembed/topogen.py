"""Random topologies (Waxman incremental growth) and Poisson workloads.

Graphs grow node by node: each newcomer links to m_neighbors existing
nodes, picked by the Waxman probability alpha*exp(-d/(beta*L)), topping
up with nearest unconnected nodes when sampling comes up short.  All
randomness flows through a caller-supplied numpy Generator (PCG64 in
practice), and the draw order is fixed, so one seed pins the whole
instance bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SubstrateNetwork, VnRequest, link_key

# virtual networks grow with the small-plane profile: two neighbors per
# new node, same alpha/beta as the substrate
VN_M_NEIGHBORS = 2
VN_ALPHA = 0.15
VN_BETA = 0.2

ARRIVAL = "arrival"
DEPARTURE = "departure"


class DegenerateGraph(Exception):
    """Requested topology is too small to contain a link."""


@dataclass(frozen=True)
class WaxmanParams:
    n_nodes: int
    hs: float = 500.0
    ls: float = 500.0     # accepted for config compatibility; placement uses hs only
    alpha: float = 0.15
    beta: float = 0.2
    m_neighbors: int = 3
    cap_min: int = 50
    cap_max: int = 100

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must be in (0, 1]")
        if self.m_neighbors < 1:
            raise ValueError("m_neighbors must be at least 1")
        if self.cap_min > self.cap_max or self.cap_min < 0:
            raise ValueError("capacity range is empty or negative")
        if self.hs <= 0:
            raise ValueError("hs must be positive")


@dataclass(frozen=True)
class WorkloadParams:
    arrival_rate: float = 1.0 / 3.0
    mean_lifetime: float = 60.0
    n_arrivals: int = 1500
    vn_size_min: int = 3
    vn_size_max: int = 10
    cpu_min: int = 2
    cpu_max: int = 10
    bw_min: int = 10
    bw_max: int = 20
    dev_min: float = 100.0
    dev_max: float = 150.0
    seed: int = 0

    def __post_init__(self):
        if self.arrival_rate <= 0 or self.mean_lifetime <= 0:
            raise ValueError("rates must be strictly positive")
        if self.n_arrivals < 0:
            raise ValueError("n_arrivals must be non-negative")
        if self.vn_size_min < 2 or self.vn_size_min > self.vn_size_max:
            raise ValueError("vn size range must be non-empty with min >= 2")
        for lo, hi in ((self.cpu_min, self.cpu_max), (self.bw_min, self.bw_max),
                       (self.dev_min, self.dev_max)):
            if lo > hi or lo <= 0:
                raise ValueError("demand ranges must be non-empty and positive")


@dataclass(frozen=True, order=True)
class Event:
    time: float
    kind_rank: int      # 0 arrival, 1 departure; makes sort order explicit
    request_id: int

    @property
    def kind(self) -> str:
        return ARRIVAL if self.kind_rank == 0 else DEPARTURE


def _waxman_topology(n, side, alpha, beta, m, rng):
    """Coordinates plus link set for an incrementally grown Waxman graph."""
    if n < 2:
        raise DegenerateGraph(f"need at least 2 nodes, got {n}")
    xs = rng.uniform(0.0, side, size=n)
    ys = rng.uniform(0.0, side, size=n)
    scale = beta * side * math.sqrt(2.0)   # beta times the grid diagonal

    def dist(u, w):
        return math.hypot(xs[u] - xs[w], ys[u] - ys[w])

    links = set()
    k0 = min(m + 1, n)
    for u in range(k0):
        for v in range(u + 1, k0):
            links.add((u, v))
    for w in range(k0, n):
        neighbors = set()
        for _ in range(w):   # one sampling trial per existing node
            if len(neighbors) >= m:
                break
            pool = [u for u in range(w) if u not in neighbors]
            u = pool[int(rng.integers(len(pool)))]
            if rng.random() < alpha * math.exp(-dist(u, w) / scale):
                neighbors.add(u)
        if len(neighbors) < m:
            # top up with the nearest not-yet-connected nodes
            rest = sorted((dist(u, w), u) for u in range(w) if u not in neighbors)
            for _, u in rest[:m - len(neighbors)]:
                neighbors.add(u)
        links.update(link_key(u, w) for u in neighbors)
    return xs, ys, sorted(links)


def gen_waxman(p: WaxmanParams, rng: np.random.Generator) -> SubstrateNetwork:
    """Connected substrate with uniform integer capacities on nodes and links."""
    xs, ys, links = _waxman_topology(p.n_nodes, p.hs, p.alpha, p.beta,
                                     p.m_neighbors, rng)
    cpu = rng.integers(p.cap_min, p.cap_max + 1, size=p.n_nodes)
    bw = rng.integers(p.cap_min, p.cap_max + 1, size=len(links))
    return SubstrateNetwork(
        nodes=[(u, int(cpu[u]), float(xs[u]), float(ys[u])) for u in range(p.n_nodes)],
        links=[(u, v, int(b)) for (u, v), b in zip(links, bw)],
    )


def gen_request(p: WorkloadParams, sn_extent: float, rng: np.random.Generator) -> VnRequest:
    """Random virtual network over the substrate's coordinate grid."""
    n = int(rng.integers(p.vn_size_min, p.vn_size_max + 1))
    xs, ys, links = _waxman_topology(n, sn_extent, VN_ALPHA, VN_BETA,
                                     VN_M_NEIGHBORS, rng)
    cpu = rng.integers(p.cpu_min, p.cpu_max + 1, size=n)
    bw = rng.integers(p.bw_min, p.bw_max + 1, size=len(links))
    dev = rng.uniform(p.dev_min, p.dev_max, size=n)
    return VnRequest(
        nodes=[(i, int(cpu[i]), float(xs[i]), float(ys[i]), float(dev[i]))
               for i in range(n)],
        links=[(i, j, int(b)) for (i, j), b in zip(links, bw)],
    )


def gen_workload(p: WorkloadParams, rng: np.random.Generator) -> list[Event]:
    """Arrival/departure events for a Poisson process with exponential lifetimes.

    Sorted by time; simultaneous events order arrivals first, then by
    request id, so replays are stable.
    """
    events = []
    t = 0.0
    for rid in range(p.n_arrivals):
        t += float(rng.exponential(1.0 / p.arrival_rate))
        life = float(rng.exponential(p.mean_lifetime))
        events.append(Event(t, 0, rid))
        events.append(Event(t + life, 1, rid))
    events.sort()
    return events
