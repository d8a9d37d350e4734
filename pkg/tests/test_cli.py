import csv
import json

import pytest

from vnembed.cli import (
    ExperimentSpec,
    _ci95,
    _int,
    _num,
    load_spec,
    main,
    run_experiment,
    scaling_report,
    verify_run_dir,
)
from vnembed.model import SubstrateNetwork
from vnembed.sim import SimConfig
from vnembed.topogen import WaxmanParams, WorkloadParams


def _small_workload(arrivals=10):
    return WorkloadParams(n_arrivals=arrivals, vn_size_min=2, vn_size_max=3)


def _small_cfg(embedder="gnmsp", arrivals=10):
    return SimConfig(embedder=embedder, substrate=WaxmanParams(10, hs=100.0, ls=100.0),
                     workload=_small_workload(arrivals), sample_interval=20.0)


def _write(path, text):
    path.write_text(text)
    return str(path)


SMOKE_INI = """\
[experiment]
name = smoke
preset = paper-small
embedders = gnmsp
replications = 2
seed_base = 7

[substrate]
n_nodes = 10
hs = 100
ls = 100

[workload]
n_arrivals = 12
vn_size_min = 2
vn_size_max = 3

[sim]
sample_interval = 20
"""


def test_numeric_parsing():
    assert _num("1/3") == pytest.approx(1 / 3)
    assert _num("0.2") == 0.2
    assert _num(60) == 60.0
    assert _int("15") == 15
    with pytest.raises(ValueError):
        _int("3.5")


def test_ci95_degenerate_and_symmetric():
    assert _ci95([4.0]) == 0.0
    hw = _ci95([1.0, 2.0, 3.0, 4.0])
    assert hw > 0
    assert _ci95([10 + x for x in (1.0, 2.0, 3.0, 4.0)]) == pytest.approx(hw)


def test_preset_paper_small(tmp_path):
    ini = _write(tmp_path / "s.ini",
                 "[experiment]\npreset = paper-small\nembedders = pathgen\n")
    spec = load_spec(ini)
    (name, cfg), = spec.cells
    assert name == "pathgen"
    sub, wl = cfg.substrate, cfg.workload
    assert (sub.n_nodes, sub.hs, sub.ls) == (20, 500.0, 500.0)
    assert (sub.alpha, sub.beta, sub.m_neighbors) == (0.15, 0.2, 3)
    assert (sub.cap_min, sub.cap_max) == (50, 100)
    assert wl.arrival_rate == pytest.approx(1 / 3)
    assert (wl.mean_lifetime, wl.n_arrivals) == (60.0, 1500)
    assert (wl.vn_size_min, wl.vn_size_max) == (3, 10)
    assert (wl.cpu_min, wl.cpu_max, wl.bw_min, wl.bw_max) == (2, 10, 10, 20)
    assert (wl.dev_min, wl.dev_max) == (100.0, 150.0)
    assert cfg.sample_interval == 50.0


def test_preset_paper_large(tmp_path):
    ini = _write(tmp_path / "l.ini",
                 "[experiment]\npreset = paper-large\nembedders = pathgen\n")
    (_, cfg), = load_spec(ini).cells
    assert cfg.substrate.n_nodes == 100
    assert (cfg.workload.vn_size_min, cfg.workload.vn_size_max) == (15, 25)


def test_spec_overrides_and_flags(tmp_path):
    ini = _write(tmp_path / "o.ini", SMOKE_INI)
    spec = load_spec(ini, seed=5, out=str(tmp_path / "d"), time_limit=2.5, iterations=2)
    assert spec.name == "smoke" and spec.replications == 2
    assert spec.seed_base == 5 and spec.out_dir == str(tmp_path / "d")
    (_, cfg), = spec.cells
    assert cfg.substrate.n_nodes == 10       # file overrides the preset
    assert cfg.workload.n_arrivals == 12
    assert cfg.time_limit == 2.5 and cfg.iterations == 2
    assert cfg.sample_interval == 20.0


def test_spec_validation():
    cfg = _small_cfg()
    with pytest.raises(ValueError):
        ExperimentSpec("x", [("a", cfg), ("a", cfg)])
    with pytest.raises(ValueError):
        ExperimentSpec("x", [("a", cfg)], replications=0)
    with pytest.raises(ValueError):
        ExperimentSpec("x", [])


def test_bad_spec_inputs(tmp_path):
    with pytest.raises(ValueError):
        load_spec(str(tmp_path / "nope.ini"))
    bad_emb = _write(tmp_path / "e.ini", "[experiment]\nembedders = annealing\n")
    with pytest.raises(ValueError):
        load_spec(bad_emb)
    bad_preset = _write(tmp_path / "p.ini", "[experiment]\npreset = paper-tiny\n")
    with pytest.raises(ValueError):
        load_spec(bad_preset)


def test_run_experiment_single_cell(tmp_path):
    spec = ExperimentSpec("one", [("gnmsp", _small_cfg())], replications=1,
                          seed_base=7, out_dir=str(tmp_path / "out"))
    assert run_experiment(spec) == 0
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["aggregate.json", "gnmsp_rep0.csv"]
    first = (tmp_path / "out" / "gnmsp_rep0.csv").read_text().splitlines()[0]
    assert first.startswith("# vnembed ") and "cell=gnmsp" in first and "seed=7" in first
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert agg["complete"] and agg["failures"] == []
    cell = agg["cells"]["gnmsp"]
    assert len(cell["runs"]) == 1 and cell["runs"][0]["seed"] == 7
    assert all(v == 0.0 for v in cell["ci95"].values())  # one rep has no spread


def _read_samples(path):
    with open(path) as fh:
        fh.readline()
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def test_aggregate_matches_csv_recount(tmp_path):
    out = tmp_path / "agg"
    spec = ExperimentSpec(
        "recount",
        [("gnmsp", _small_cfg("gnmsp")), ("pathgen", _small_cfg("pathgen"))],
        replications=2, seed_base=3, out_dir=str(out))
    assert run_experiment(spec) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    for name, cell in agg["cells"].items():
        finals, utils = [], []
        for rep in range(2):
            rows = _read_samples(out / f"{name}_rep{rep}.csv")
            finals.append(rows[-1]["acceptance_ratio"])
            utils.append(sum(r["node_util"] for r in rows) / len(rows))
        assert cell["mean"]["acceptance_ratio"] == pytest.approx(
            sum(finals) / 2, abs=1e-12)
        assert cell["mean"]["node_util_mean"] == pytest.approx(
            sum(utils) / 2, abs=1e-12)


def test_outputs_deterministic(tmp_path):
    specs = [ExperimentSpec("det", [("gnmsp", _small_cfg())], replications=2,
                            seed_base=1, out_dir=str(tmp_path / d))
             for d in ("a", "b")]
    for s in specs:
        assert run_experiment(s) == 0
    for rep in range(2):
        a = (tmp_path / "a" / f"gnmsp_rep{rep}.csv").read_bytes()
        b = (tmp_path / "b" / f"gnmsp_rep{rep}.csv").read_bytes()
        assert a == b
    digests = [
        [r["digest"] for r in json.loads((tmp_path / d / "aggregate.json").read_text())
         ["cells"]["gnmsp"]["runs"]]
        for d in ("a", "b")]
    assert digests[0] == digests[1]


def test_replay_check_runs_clean(tmp_path):
    spec = ExperimentSpec("replay", [("gnmsp", _small_cfg(arrivals=6))],
                          replications=1, out_dir=str(tmp_path / "r"),
                          replay_check=True)
    assert run_experiment(spec) == 0
    agg = json.loads((tmp_path / "r" / "aggregate.json").read_text())
    assert agg["replay_check"] and agg["complete"]


def test_verify_accepts_then_catches_corruption(tmp_path):
    out = tmp_path / "v"
    spec = ExperimentSpec("verify", [("gnmsp", _small_cfg())], replications=1,
                          seed_base=2, out_dir=str(out))
    assert run_experiment(spec) == 0
    assert verify_run_dir(out) == []
    assert main(["verify", str(out)]) == 0

    csv_path = out / "gnmsp_rep0.csv"
    lines = csv_path.read_text().splitlines()
    cells = lines[-1].split(",")
    cells[-1] = str(float(cells[-1]) + 1.0)  # break profit = revenue - cost
    lines[-1] = ",".join(cells)
    csv_path.write_text("\n".join(lines) + "\n")
    problems = verify_run_dir(out)
    assert problems and any("profit" in p for p in problems)
    assert main(["verify", str(out)]) == 1

    assert verify_run_dir(tmp_path / "missing") == [
        f"{tmp_path / 'missing' / 'aggregate.json'} is missing"]


def test_scaling_single_row(tmp_path):
    rows = scaling_report([8], ["gnmsp"], 2, substrate=WaxmanParams(8, hs=100.0),
                          workload=_small_workload(6), seed_base=0,
                          out_dir=str(tmp_path))
    assert len(rows) == 1
    row = rows[0]
    assert row["n_nodes"] == 8 and row["embedder"] == "gnmsp"
    assert row["replications"] == 2 and row["censored_requests"] == 0
    assert row["wall_mean_s"] > 0 and row["wall_ci95_s"] >= 0
    text = (tmp_path / "scaling.csv").read_text().splitlines()
    assert text[0].startswith("# vnembed ") and len(text) == 3


def test_scaling_validates_inputs():
    with pytest.raises(ValueError):
        scaling_report([10, 8], ["gnmsp"], 1, substrate=WaxmanParams(8),
                       workload=_small_workload(2))
    with pytest.raises(ValueError):
        scaling_report([8, 8], ["gnmsp"], 1, substrate=WaxmanParams(8),
                       workload=_small_workload(2))
    with pytest.raises(ValueError):
        scaling_report([8], ["gnmsp"], 0, substrate=WaxmanParams(8),
                       workload=_small_workload(2))


def test_scaling_reports_censoring(tmp_path):
    rows = scaling_report([14], ["vineopt"], 1, substrate=WaxmanParams(14, hs=100.0),
                          workload=_small_workload(4), time_limit=1e-9)
    assert rows[0]["censored_requests"] >= 1


def test_main_run_and_verify(tmp_path):
    ini = _write(tmp_path / "spec.ini", SMOKE_INI)
    out = tmp_path / "out"
    assert main(["run", ini, "--out", str(out)]) == 0
    assert (out / "aggregate.json").exists()
    assert main(["verify", str(out)]) == 0
    assert main(["run", str(tmp_path / "missing.ini")]) == 2


def test_main_scaling(tmp_path, capsys):
    ini = _write(tmp_path / "scale.ini", SMOKE_INI + "\n[scaling]\nsizes = 8,10\n")
    assert main(["scaling", ini, "--out", str(tmp_path / "sc")]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 2 and all("wall_mean_s=" in line for line in printed)
    assert (tmp_path / "sc" / "scaling.csv").exists()
    no_sizes = _write(tmp_path / "plain.ini", SMOKE_INI)
    assert main(["scaling", no_sizes]) == 2


def test_main_gen(tmp_path, capsys):
    assert main(["gen", "--nodes", "8", "--seed", "3", "--requests", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    sn = SubstrateNetwork.from_dict(doc["substrate"])
    assert sn.n_nodes == 8 and len(doc["requests"]) == 2
    target = tmp_path / "inst.json"
    assert main(["gen", "--nodes", "6", "--out", str(target)]) == 0
    assert json.loads(target.read_text())["substrate"]["nodes"]
