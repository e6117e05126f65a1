import csv
import hashlib
import json

import pytest

from dockless.cli import main
from dockless.demand import DemandModel
from dockless.mip import ProblemInstance


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def ok(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth through report once on a tiny system and keep the files."""
    d = tmp_path_factory.mktemp("pipe")
    f = {name: d / name for name in ("pings.csv", "truth.json", "trips.csv", "stations.json",
                                     "annotated.csv", "model.json", "sim.csv", "sweep.csv",
                                     "summary.csv")}
    ok("synth", "--n-stations", 6, "--bikes-per-station", 5, "--base-rate", 0.2, "--days", 3,
       "--seed", 4, "--output", f["pings.csv"], "--truth", f["truth.json"])
    ok("extract-trips", "--input", f["pings.csv"], "--output", f["trips.csv"])
    ok("cluster", "--input", f["trips.csv"], "--k", 6, "--regions", 1, "--pings", f["pings.csv"],
       "--output", f["stations.json"], "--trips-output", f["annotated.csv"])
    ok("build-demand", "--input", f["annotated.csv"], "--stations", f["stations.json"],
       "--output", f["model.json"])
    common = ["--stations", f["stations.json"], "--model", f["model.json"], "--iterations", 6]
    ok("simulate", *common, "--strategy", "dynamic", "--vehicles", 2, "--output", f["sim.csv"])
    ok("sweep", *common, "--strategy", "dynamic", "--fleet-factor", 0.5, 1.0, "--vehicles", 1, 2,
       "--output", f["sweep.csv"])
    ok("report", "--input", f["sweep.csv"], "--output", f["summary.csv"])
    return d, f


class TestPipeline:
    def test_outputs_exist(self, pipeline):
        _, f = pipeline
        for p in f.values():
            assert p.exists() and p.stat().st_size > 0, p

    def test_stations_and_model_agree(self, pipeline):
        _, f = pipeline
        n = len(json.loads(f["stations.json"].read_text())["stations"])
        assert n == 6
        assert DemandModel.load(f["model.json"]).n_stations == n

    def test_simulation_rows(self, pipeline):
        _, f = pipeline
        recs = rows(f["sim.csv"])
        assert [int(r["step"]) for r in recs] == list(range(6))

    def test_sweep_grid(self, pipeline):
        _, f = pipeline
        cells = {(float(r["fleet_factor"]), int(r["vehicles"])) for r in rows(f["sweep.csv"])}
        assert cells == {(0.5, 1), (0.5, 2), (1.0, 1), (1.0, 2)}

    def test_report_figures(self, pipeline):
        d, f = pipeline
        assert len(rows(f["summary.csv"])) == 2
        for name in ("summary_lost_demand.png", "summary_trips.png"):
            assert (d / name).read_bytes()[:4] == b"\x89PNG"

    def test_manifest_sidecar(self, pipeline):
        _, f = pipeline
        doc = json.loads((f["sweep.csv"].parent / "sweep.csv.manifest.json").read_text())
        m = doc["manifest"]
        assert m["command"] == "sweep"
        assert m["outputs"][0]["sha256"] == hashlib.sha256(f["sweep.csv"].read_bytes()).hexdigest()
        assert set(m["inputs"]) == {"stations", "model"}
        body = json.dumps(m, sort_keys=True).encode()
        assert doc["manifest_sha256"] == hashlib.sha256(body).hexdigest()

    def test_simulate_deterministic(self, pipeline, tmp_path):
        _, f = pipeline
        again = tmp_path / "sim.csv"
        ok("simulate", "--stations", f["stations.json"], "--model", f["model.json"],
           "--iterations", 6, "--strategy", "dynamic", "--vehicles", 2, "--output", again)
        assert again.read_bytes() == f["sim.csv"].read_bytes()


class TestConfig:
    def test_flag_overrides_config(self, pipeline, tmp_path):
        _, f = pipeline
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"stations": str(f["stations.json"]), "model": str(f["model.json"]),
                                   "iterations": 4, "strategy": "static"}))
        out = tmp_path / "a.csv"
        ok("simulate", "--config", cfg, "--output", out)
        assert len(rows(out)) == 4
        ok("simulate", "--config", cfg, "--iterations", 3, "--output", out)
        assert len(rows(out)) == 3
        man = json.loads((tmp_path / "a.csv.manifest.json").read_text())["manifest"]
        assert man["config"]["name"] == "static" and man["config"]["iterations"] == 3

    def test_solve_settings(self, tmp_path):
        inst = ProblemInstance([10, 0], [[0, -5]], 1, 10, 1, 1)
        src, out, cfg = tmp_path / "i.json", tmp_path / "p.json", tmp_path / "c.json"
        src.write_text(json.dumps(inst.to_json()))
        ok("solve", "--input", src, "--output", out)
        assert json.loads(out.read_text())["objective"] == "1"
        cfg.write_text(json.dumps({"alpha": 6}))
        ok("solve", "--config", cfg, "--input", src, "--output", out)
        assert json.loads(out.read_text())["objective"] == "5"
        ok("solve", "--config", cfg, "--alpha", "1", "--input", src, "--output", out)
        assert json.loads(out.read_text())["objective"] == "1"
        ok("solve", "--vehicles", 0, "--input", src, "--output", out)
        assert json.loads(out.read_text())["objective"] == "5"


class TestErrors:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["bogus"])
        assert exc.value.code == 2

    def test_missing_input_file(self, tmp_path, capsys):
        assert main(["extract-trips", "--input", str(tmp_path / "nope.csv"),
                     "--output", str(tmp_path / "o.csv")]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_required_setting(self, tmp_path):
        assert main(["extract-trips", "--output", str(tmp_path / "o.csv")]) == 1

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["solve", "--config", str(cfg)]) == 1

    def test_station_model_mismatch(self, pipeline, tmp_path):
        _, f = pipeline
        doc = json.loads(f["stations.json"].read_text())
        doc["stations"] = doc["stations"][:3]
        doc["initial_inventory"] = {}
        short = tmp_path / "short.json"
        short.write_text(json.dumps(doc))
        assert main(["simulate", "--stations", str(short), "--model", str(f["model.json"]),
                     "--output", str(tmp_path / "o.csv")]) == 1

    def test_invalid_strategy_value(self, pipeline, tmp_path):
        _, f = pipeline
        assert main(["simulate", "--stations", str(f["stations.json"]), "--model",
                     str(f["model.json"]), "--iterations", "0",
                     "--output", str(tmp_path / "o.csv")]) == 1
