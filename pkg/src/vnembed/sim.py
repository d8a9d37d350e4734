"""Discrete-event simulation driving an embedder over a request workload.

One run owns its substrate: requests arrive by a Poisson process, get
embedded against current residuals (or rejected), and release everything
at departure.  Metrics follow the usual accounting: revenue is what a
request asks for, cost is what the substrate actually spends hosting it,
so multi-hop routing is pure overhead.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import gnmsp, vine_opt
from .model import Embedding, Rejection, VnRequest, allocate, release, verify_conservation
from .pathgen import final_sol
from .topogen import (
    ARRIVAL,
    WaxmanParams,
    WorkloadParams,
    gen_request,
    gen_waxman,
    gen_workload,
)

EMBEDDERS = ("pathgen", "vineopt", "gnmsp")

# unit resource prices; with these, an all-1-hop embedding costs exactly
# its revenue and every extra hop shows up as overhead
KAPPA = 1.0
XI = 1.0


@dataclass
class SimConfig:
    embedder: str = "pathgen"
    substrate: WaxmanParams = field(default_factory=lambda: WaxmanParams(20))
    workload: WorkloadParams = field(default_factory=WorkloadParams)
    sample_interval: float = 50.0
    time_limit: float | None = None   # per-request solver budget, seconds
    iterations: int = 1               # pricing rounds, pathgen only

    def __post_init__(self):
        if self.embedder not in EMBEDDERS:
            raise ValueError(f"embedder must be one of {EMBEDDERS}, got {self.embedder!r}")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive when set")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


@dataclass
class MetricsSeries:
    """Everything a run produces, ready for CSV/JSON dumping.

    samples: rows of (time, acceptance_ratio, node_util, link_util,
    revenue, cost, profit) at each sampling instant plus one terminal row.
    requests: one row per arrival with acceptance flag and wall times.
    events: cumulative counters at every event, for exact replays.
    replay_digest hashes everything except wall-clock timings.
    """

    samples: list = field(default_factory=list)
    requests: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    replay_digest: str = ""


def revenue(vn: VnRequest) -> float:
    """What the request pays: its summed node and link demands."""
    return float(sum(vn.cpu) + sum(vn.bw.values()))


def cost(vn: VnRequest, emb: Embedding) -> float:
    """What the substrate spends: node demands plus demand per path hop."""
    spent = KAPPA * sum(vn.cpu)
    for e, seq in emb.link_map.items():
        spent += XI * vn.bw[e] * (len(seq) - 1)
    return float(spent)


def _embed(cfg: SimConfig, sn, vn, diag):
    if cfg.embedder == "pathgen":
        return final_sol(sn, vn, iterations=cfg.iterations,
                         time_limit=cfg.time_limit, diag=diag)
    if cfg.embedder == "vineopt":
        return vine_opt(sn, vn, time_limit=cfg.time_limit, diag=diag)
    return gnmsp(sn, vn, diag=diag)


def _digest(samples, requests, events) -> str:
    timeless = [{k: v for k, v in row.items() if k not in ("wall_s", "stage_s")}
                for row in requests]
    blob = json.dumps({"samples": samples, "requests": timeless, "events": events},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run(cfg: SimConfig, rng) -> MetricsSeries:
    """Simulate one workload; rng is an int seed or a SeedSequence.

    Substrate, event times, and request bodies draw from independent
    spawned streams, so the same seed always replays the same run.
    Any residual-accounting violation aborts instead of being absorbed
    into the metrics.
    """
    ss = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    sub_ss, wl_ss, req_ss = ss.spawn(3)
    sn = gen_waxman(cfg.substrate, np.random.default_rng(sub_ss))
    events = gen_workload(cfg.workload, np.random.default_rng(wl_ss))
    req_rng = np.random.default_rng(req_ss)
    extent = sn.extent()
    requests = [gen_request(cfg.workload, extent, req_rng)
                for _ in range(cfg.workload.n_arrivals)]

    total_cpu, total_bw = sn.total_cpu(), sn.total_bw()
    live, rejected = {}, set()
    arrived = accepted = 0
    rev = spent = 0.0
    out = MetricsSeries()

    def sample(t):
        node_util = 1.0 - sum(sn.residual_cpu) / total_cpu
        link_util = 1.0 - sum(sn.residual_bw.values()) / total_bw
        assert -1e-12 <= node_util <= 1.0 + 1e-12 and -1e-12 <= link_util <= 1.0 + 1e-12
        verify_conservation(sn)
        out.samples.append({
            "time": t,
            "acceptance_ratio": accepted / arrived if arrived else 0.0,
            "node_util": node_util,
            "link_util": link_util,
            "revenue": rev,
            "cost": spent,
            "profit": rev - spent,
        })

    next_t = cfg.sample_interval
    for ev in events:
        # sampling instants strictly precede a simultaneous event
        while next_t <= ev.time:
            sample(next_t)
            next_t += cfg.sample_interval
        if ev.kind == ARRIVAL:
            arrived += 1
            vn = requests[ev.request_id]
            before_cpu = list(sn.residual_cpu)
            before_bw = dict(sn.residual_bw)
            diag = {}
            t0 = time.perf_counter()
            try:
                emb = _embed(cfg, sn, vn, diag)
            except Rejection as rej:
                wall = time.perf_counter() - t0
                assert sn.residual_cpu == before_cpu and sn.residual_bw == before_bw, \
                    f"rejection of request {ev.request_id} touched residuals"
                rejected.add(ev.request_id)
                out.requests.append({"id": ev.request_id, "accepted": False,
                                     "reject_stage": rej.stage,
                                     "reject_reason": rej.reason, "wall_s": wall,
                                     "stage_s": diag.get("stage_s", {})})
            else:
                wall = time.perf_counter() - t0
                allocate(sn, vn, emb)
                live[ev.request_id] = (vn, emb)
                accepted += 1
                rev += revenue(vn)
                spent += cost(vn, emb)
                out.requests.append({"id": ev.request_id, "accepted": True,
                                     "objective": emb.objective_value,
                                     "solver_status": diag.get("status", ""),
                                     "wall_s": wall,
                                     "stage_s": diag.get("stage_s", {})})
        elif ev.request_id in rejected:
            continue  # departure of a rejected request: nothing to release, no record
        else:
            vn, emb = live.pop(ev.request_id)
            release(sn, vn, emb)
        verify_conservation(sn)
        out.events.append({"time": ev.time, "kind": ev.kind, "id": ev.request_id,
                           "arrived": arrived, "accepted": accepted,
                           "revenue": rev, "cost": spent})

    assert not live, "every accepted request must depart within its own workload"
    assert sn.residual_cpu == sn.cpu and sn.residual_bw == sn.bw
    sample(events[-1].time if events else 0.0)

    walls = [r["wall_s"] for r in out.requests]
    out.final = {
        "arrived": arrived,
        "accepted": accepted,
        "acceptance_ratio": accepted / arrived if arrived else 0.0,
        "node_util_mean": float(np.mean([s["node_util"] for s in out.samples])),
        "link_util_mean": float(np.mean([s["link_util"] for s in out.samples])),
        "revenue": rev,
        "cost": spent,
        "profit": rev - spent,
        "embed_wall_mean_s": float(np.mean(walls)) if walls else 0.0,
        "embed_wall_p95_s": float(np.percentile(walls, 95)) if walls else 0.0,
    }
    out.replay_digest = _digest(out.samples, out.requests, out.events)
    return out
