"""Experiment runner: INI specs, seeded replications, CSV/JSON emission.

A spec file holds flat key=value sections ([experiment], [substrate],
[workload], [sim]); the `preset` key fills in a complete published setup
first and any explicit key overrides it.  Replications run in a process
pool, each with seed = seed_base + replication index, so outputs are
byte-reproducible except for wall-clock timing fields.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .sim import EMBEDDERS, SimConfig, run
from .topogen import WaxmanParams, WorkloadParams, gen_request, gen_waxman

SAMPLE_COLUMNS = ("time", "acceptance_ratio", "node_util", "link_util",
                  "revenue", "cost", "profit")
SCALING_COLUMNS = ("n_nodes", "embedder", "replications", "wall_mean_s",
                   "wall_ci95_s", "acceptance_mean", "censored_requests")
AGG_METRICS = ("acceptance_ratio", "node_util_mean", "link_util_mean",
               "revenue", "cost", "profit", "embed_wall_mean_s")

# published setups; the *_small workload is the one desk-scale tests trim
# down (200 arrivals instead of 1500) to stay inside a test budget
PRESETS = {
    "paper-small": {
        "substrate": {"n_nodes": 20, "hs": 500, "ls": 500, "alpha": 0.15,
                      "beta": 0.2, "m_neighbors": 3, "cap_min": 50, "cap_max": 100},
        "workload": {"arrival_rate": "1/3", "mean_lifetime": 60, "n_arrivals": 1500,
                     "vn_size_min": 3, "vn_size_max": 10, "cpu_min": 2, "cpu_max": 10,
                     "bw_min": 10, "bw_max": 20, "dev_min": 100, "dev_max": 150},
        "sim": {"sample_interval": 50},
    },
    "paper-large": {
        "substrate": {"n_nodes": 100, "hs": 500, "ls": 500, "alpha": 0.15,
                      "beta": 0.2, "m_neighbors": 3, "cap_min": 50, "cap_max": 100},
        "workload": {"arrival_rate": "1/3", "mean_lifetime": 60, "n_arrivals": 1500,
                     "vn_size_min": 15, "vn_size_max": 25, "cpu_min": 2, "cpu_max": 10,
                     "bw_min": 10, "bw_max": 20, "dev_min": 100, "dev_max": 150},
        "sim": {"sample_interval": 50},
    },
}


def _num(value):
    """Numeric config value; accepts plain literals and fractions like 1/3."""
    s = str(value).strip()
    if "/" in s:
        return float(Fraction(s))
    return float(s)


def _int(value) -> int:
    f = _num(value)
    if f != int(f):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(f)


@dataclass
class ExperimentSpec:
    name: str
    cells: list                  # (cell name, SimConfig) pairs
    replications: int = 1
    seed_base: int = 0
    out_dir: str = "runs"
    replay_check: bool = False   # rerun every cell and compare digests

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        names = [name for name, _ in self.cells]
        if len(names) != len(set(names)):
            raise ValueError(f"cell names must be unique, got {names}")
        if not self.cells:
            raise ValueError("experiment needs at least one cell")


def _merged_sections(cp: configparser.ConfigParser) -> dict:
    base = {"substrate": {}, "workload": {}, "sim": {}}
    preset = cp.get("experiment", "preset", fallback=None)
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        base = {sec: dict(vals) for sec, vals in PRESETS[preset].items()}
    for sec in base:
        if cp.has_section(sec):
            base[sec].update(cp.items(sec))
    return base


def _build_sim_config(embedder: str, raw: dict, *, time_limit=None, iterations=None) -> SimConfig:
    sub, wl, sim = raw["substrate"], raw["workload"], raw["sim"]
    substrate = WaxmanParams(
        n_nodes=_int(sub.get("n_nodes", 20)),
        hs=_num(sub.get("hs", 500)), ls=_num(sub.get("ls", 500)),
        alpha=_num(sub.get("alpha", 0.15)), beta=_num(sub.get("beta", 0.2)),
        m_neighbors=_int(sub.get("m_neighbors", 3)),
        cap_min=_int(sub.get("cap_min", 50)), cap_max=_int(sub.get("cap_max", 100)))
    workload = WorkloadParams(
        arrival_rate=_num(wl.get("arrival_rate", "1/3")),
        mean_lifetime=_num(wl.get("mean_lifetime", 60)),
        n_arrivals=_int(wl.get("n_arrivals", 1500)),
        vn_size_min=_int(wl.get("vn_size_min", 3)),
        vn_size_max=_int(wl.get("vn_size_max", 10)),
        cpu_min=_int(wl.get("cpu_min", 2)), cpu_max=_int(wl.get("cpu_max", 10)),
        bw_min=_int(wl.get("bw_min", 10)), bw_max=_int(wl.get("bw_max", 20)),
        dev_min=_num(wl.get("dev_min", 100)), dev_max=_num(wl.get("dev_max", 150)))
    raw_tl = sim.get("time_limit_s", "")
    cfg_tl = _num(raw_tl) if str(raw_tl).strip() else None
    return SimConfig(
        embedder=embedder, substrate=substrate, workload=workload,
        sample_interval=_num(sim.get("sample_interval", 50)),
        time_limit=time_limit if time_limit is not None else cfg_tl,
        iterations=iterations if iterations is not None else _int(sim.get("iterations", 1)))


def load_spec(path, *, seed=None, out=None, time_limit=None, iterations=None) -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ValueError(f"cannot read spec file {path}")
    raw = _merged_sections(cp)
    embedders = [e.strip() for e in
                 cp.get("experiment", "embedders", fallback="pathgen").split(",") if e.strip()]
    for e in embedders:
        if e not in EMBEDDERS:
            raise ValueError(f"unknown embedder {e!r}; have {EMBEDDERS}")
    cells = [(e, _build_sim_config(e, raw, time_limit=time_limit, iterations=iterations))
             for e in embedders]
    return ExperimentSpec(
        name=cp.get("experiment", "name", fallback=Path(path).stem),
        cells=cells,
        replications=cp.getint("experiment", "replications", fallback=1),
        seed_base=seed if seed is not None else cp.getint("experiment", "seed_base", fallback=0),
        out_dir=out if out is not None else cp.get("experiment", "out", fallback="runs"),
        replay_check=cp.getboolean("experiment", "replay_check", fallback=False))


def _run_one(job):
    name, cfg, rep, seed, replay_check = job
    series = run(cfg, seed)
    if replay_check:
        if run(cfg, seed).replay_digest != series.replay_digest:
            raise RuntimeError(f"replay mismatch: cell {name} rep {rep} seed {seed}")
    return series


def _write_run_csv(path: Path, cell: str, seed: int, series) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# vnembed {__version__} cell={cell} seed={seed}\n")
        w = csv.DictWriter(fh, fieldnames=SAMPLE_COLUMNS)
        w.writeheader()
        w.writerows(series.samples)


def _ci95(xs) -> float:
    # two-sided t half-width; a single replication has no spread to report
    if len(xs) < 2:
        return 0.0
    return float(stats.t.ppf(0.975, len(xs) - 1) * np.std(xs, ddof=1) / math.sqrt(len(xs)))


def _censored(series) -> int:
    n = 0
    for r in series.requests:
        if r.get("solver_status") == "time_limit":
            n += 1
        elif not r["accepted"] and "time limit" in r.get("reject_reason", ""):
            n += 1
    return n


def run_experiment(spec: ExperimentSpec) -> int:
    """Execute every cell x replication; 0 on full success, 1 otherwise."""
    outdir = Path(spec.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(name, cfg, rep, spec.seed_base + rep, spec.replay_check)
            for name, cfg in spec.cells for rep in range(spec.replications)]
    per_cell, failures = {name: [] for name, _ in spec.cells}, []
    with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
        futures = {pool.submit(_run_one, job): job for job in jobs}
        for fut in as_completed(futures):
            name, _, rep, seed, _ = futures[fut]
            try:
                series = fut.result()
            except Exception as exc:
                failures.append({"cell": name, "rep": rep, "seed": seed,
                                 "error": repr(exc)})
                continue
            _write_run_csv(outdir / f"{name}_rep{rep}.csv", name, seed, series)
            per_cell[name].append((rep, seed, series))

    cells = {}
    for name, runs in per_cell.items():
        runs.sort()
        rows = [{"rep": rep, "seed": seed, "digest": s.replay_digest,
                 "censored_requests": _censored(s), **s.final}
                for rep, seed, s in runs]
        cells[name] = {
            "runs": rows,
            "mean": {m: float(np.mean([r[m] for r in rows])) if rows else None
                     for m in AGG_METRICS},
            "ci95": {m: _ci95([r[m] for r in rows]) if rows else None
                     for m in AGG_METRICS},
        }
    aggregate = {
        "experiment": spec.name,
        "version": __version__,
        "seed_base": spec.seed_base,
        "replications": spec.replications,
        "replay_check": spec.replay_check,
        "complete": not failures,
        "failures": failures,
        "cells": cells,
    }
    (outdir / "aggregate.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True))
    return 0 if not failures else 1


def scaling_report(sizes, embedders, replications, *, substrate: WaxmanParams,
                   workload: WorkloadParams, seed_base: int = 0,
                   time_limit: float | None = None, iterations: int = 1,
                   sample_interval: float = 50.0, out_dir=None) -> list[dict]:
    """Per (substrate size, embedder): mean embedding wall time across seeds.

    Runs hitting the per-request time limit are counted in the censored
    column instead of being dropped.
    """
    if list(sizes) != sorted(set(sizes)):
        raise ValueError("sizes must be strictly ascending")
    if replications < 1:
        raise ValueError("replications must be at least 1")
    jobs = []
    for size in sizes:
        for emb in embedders:
            cfg = SimConfig(embedder=emb, substrate=replace(substrate, n_nodes=size),
                            workload=workload, sample_interval=sample_interval,
                            time_limit=time_limit, iterations=iterations)
            for rep in range(replications):
                jobs.append((emb, cfg, rep, seed_base + rep, False))
    results = {}
    with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
        futures = {pool.submit(_run_one, job): job for job in jobs}
        for fut in as_completed(futures):
            emb, cfg, rep, seed, _ = futures[fut]
            results.setdefault((cfg.substrate.n_nodes, emb), []).append(fut.result())
    rows = []
    for size in sizes:
        for emb in embedders:
            runs = results[(size, emb)]
            walls = [s.final["embed_wall_mean_s"] for s in runs]
            rows.append({"n_nodes": size, "embedder": emb,
                         "replications": replications,
                         "wall_mean_s": float(np.mean(walls)),
                         "wall_ci95_s": _ci95(walls),
                         "acceptance_mean": float(np.mean(
                             [s.final["acceptance_ratio"] for s in runs])),
                         "censored_requests": sum(_censored(s) for s in runs)})
    if out_dir is not None:
        outdir = Path(out_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "scaling.csv", "w", newline="") as fh:
            fh.write(f"# vnembed {__version__} seed_base={seed_base}\n")
            w = csv.DictWriter(fh, fieldnames=SCALING_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return rows


def _read_run_csv(path: Path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# vnembed "):
            raise ValueError(f"{path}: missing version header")
        rows = [{k: float(v) for k, v in row.items()}
                for row in csv.DictReader(fh)]
    return rows


def verify_run_dir(path) -> list[str]:
    """Re-check invariants on recorded outputs; returns a list of problems."""
    root = Path(path)
    problems = []
    agg_path = root / "aggregate.json"
    if not agg_path.exists():
        return [f"{agg_path} is missing"]
    agg = json.loads(agg_path.read_text())
    if not agg.get("complete", False):
        problems.append("aggregate is flagged incomplete")
    for name, cell in agg["cells"].items():
        finals = {m: [] for m in AGG_METRICS}
        for run_row in cell["runs"]:
            rep = run_row["rep"]
            csv_path = root / f"{name}_rep{rep}.csv"
            if not csv_path.exists():
                problems.append(f"{csv_path} is missing")
                continue
            try:
                rows = _read_run_csv(csv_path)
            except ValueError as exc:
                problems.append(str(exc))
                continue
            for k, row in enumerate(rows):
                if not (0.0 <= row["acceptance_ratio"] <= 1.0
                        and 0.0 <= row["node_util"] <= 1.0
                        and 0.0 <= row["link_util"] <= 1.0):
                    problems.append(f"{csv_path}: row {k} breaks a ratio bound")
                if abs(row["profit"] - (row["revenue"] - row["cost"])) > 1e-9:
                    problems.append(f"{csv_path}: row {k} breaks profit = revenue - cost")
            if [r["time"] for r in rows] != sorted(r["time"] for r in rows):
                problems.append(f"{csv_path}: sample times go backwards")
            last = rows[-1]
            finals["acceptance_ratio"].append(last["acceptance_ratio"])
            finals["node_util_mean"].append(float(np.mean([r["node_util"] for r in rows])))
            finals["link_util_mean"].append(float(np.mean([r["link_util"] for r in rows])))
            for m in ("revenue", "cost", "profit"):
                finals[m].append(last[m])
        # aggregate means must equal a recomputation from the raw CSVs
        for m, xs in finals.items():
            if m == "embed_wall_mean_s" or not xs:
                continue  # timing cannot be recomputed from samples
            if abs(cell["mean"][m] - float(np.mean(xs))) > 1e-9:
                problems.append(f"cell {name}: aggregate mean {m} does not match its CSVs")
    return problems


def _parse_sizes(text: str) -> list[int]:
    return [_int(s) for s in text.split(",") if s.strip()]


def _cmd_run(args) -> int:
    spec = load_spec(args.spec, seed=args.seed, out=args.out,
                     time_limit=args.time_limit_s, iterations=args.iterations)
    return run_experiment(spec)


def _cmd_scaling(args) -> int:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(args.spec):
        raise ValueError(f"cannot read spec file {args.spec}")
    if not cp.has_option("scaling", "sizes"):
        raise ValueError("scaling spec needs a [scaling] section with sizes")
    spec = load_spec(args.spec, seed=args.seed, out=args.out,
                     time_limit=args.time_limit_s, iterations=args.iterations)
    _, first = spec.cells[0]
    rows = scaling_report(
        _parse_sizes(cp.get("scaling", "sizes")),
        [name for name, _ in spec.cells],
        spec.replications,
        substrate=first.substrate, workload=first.workload,
        seed_base=spec.seed_base, time_limit=first.time_limit,
        iterations=first.iterations, sample_interval=first.sample_interval,
        out_dir=spec.out_dir)
    for row in rows:
        print(" ".join(f"{c}={row[c]}" for c in SCALING_COLUMNS))
    return 0


def _cmd_gen(args) -> int:
    params = WaxmanParams(args.nodes, hs=args.hs, ls=args.hs)
    rng = np.random.default_rng(args.seed)
    sn = gen_waxman(params, rng)
    doc = {"version": __version__, "seed": args.seed, "substrate": sn.to_dict()}
    if args.requests:
        wp = WorkloadParams()
        doc["requests"] = [gen_request(wp, sn.extent(), rng).to_dict()
                           for _ in range(args.requests)]
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _cmd_verify(args) -> int:
    problems = verify_run_dir(args.run_dir)
    for p in problems:
        print(p, file=sys.stderr)
    if not problems:
        print(f"{args.run_dir}: ok")
    return 0 if not problems else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="vnembed",
        description="Virtual network embedding experiments: run, scale, generate, verify.")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override seed_base")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--time-limit-s", type=float, default=None,
                       help="per-request solver budget in seconds")
        p.add_argument("--iterations", type=int, default=None,
                       help="pricing rounds for the path generation embedder")

    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("spec")
    common(p_run)
    p_sc = sub.add_parser("scaling", help="per-size embedding time table")
    p_sc.add_argument("spec")
    common(p_sc)
    p_gen = sub.add_parser("gen", help="dump a generated substrate as JSON")
    p_gen.add_argument("--nodes", type=int, required=True)
    p_gen.add_argument("--hs", type=float, default=500.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--requests", type=int, default=0,
                       help="also dump this many requests")
    p_gen.add_argument("--out", default=None)
    p_ver = sub.add_parser("verify", help="re-check invariants on a run directory")
    p_ver.add_argument("run_dir")

    args = ap.parse_args(argv)
    handlers = {"run": _cmd_run, "scaling": _cmd_scaling,
                "gen": _cmd_gen, "verify": _cmd_verify}
    try:
        return handlers[args.verb](args)
    except (ValueError, OSError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
