"""Command-line driver: ``dockless <subcommand> [flags]``.

Subcommands run one pipeline stage each and read/write the file formats of
the module they wrap. Every output file gets a ``<output>.manifest.json``
sidecar recording the resolved configuration, inputs, seed and digests.

Settings resolve as command-line flag, then ``--config`` JSON, then the
built-in default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from dockless import __version__

log = logging.getLogger("dockless")


class CliError(Exception):
    """I/O or validation failure; reported with exit status 1."""


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(x):
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    return x


class RunManifest:
    def __init__(self, command: str, config_path, config: dict, inputs: dict, seed):
        self.command = command
        self.config_path = None if config_path is None else str(config_path)
        self.config = config
        self.inputs = {k: str(v) for k, v in inputs.items() if v is not None}
        self.seed = seed
        self.started = time.time()

    def body(self, outputs: list) -> dict:
        return {
            "tool": "dockless",
            "version": __version__,
            "command": self.command,
            "config_path": self.config_path,
            "config": _jsonable(self.config),
            "inputs": {k: {"path": v, "sha256": sha256_file(v)} for k, v in self.inputs.items()},
            "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
            "seed": self.seed,
            "started": self.started,
            "finished": time.time(),
        }

    def write(self, outputs: list):
        """One sidecar per output, each carrying the digest of the shared body."""
        body = self.body(outputs)
        digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
        for p in outputs:
            doc = {"manifest_sha256": digest, "file": str(p), "manifest": body}
            with open(f"{p}.manifest.json", "w") as fh:
                json.dump(doc, fh, indent=1, sort_keys=True)


# -- settings ------------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    from dockless.sim import load_config

    try:
        return load_config(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _setting(args, cfg: dict, key: str, default=None, flag: str = None):
    """Flag value if given, else config value, else ``default``."""
    v = getattr(args, flag or key, None)
    if v is not None:
        return v
    if key in cfg:
        return cfg[key]
    return default


def _require(value, what: str):
    if value is None:
        raise CliError(f"missing {what}")
    return value


def _strategy_config(args, cfg: dict):
    from dockless.sim import StrategyConfig

    doc = {"name": _setting(args, cfg, "strategy", None) or cfg.get("name", "dynamic")}
    for key in ("vehicles", "T", "K", "cap", "alpha", "beta", "iterations", "seed", "start"):
        v = _setting(args, cfg, key)
        if v is not None:
            doc[key] = v
    if isinstance(doc.get("vehicles"), list):
        doc["vehicles"] = doc["vehicles"][0]
    try:
        return StrategyConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid strategy configuration: {exc}") from exc


def _open_out(path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from exc


def _read_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {what} {path}: {exc}") from exc


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, cfg):
    from dockless.ingest import write_pings
    from dockless.synth import GroundTruth, generate, imbalanced_system

    seed = int(_setting(args, cfg, "seed", 0))
    days = int(_setting(args, cfg, "days", 7))
    out = _require(_setting(args, cfg, "output"), "--output")
    src = _setting(args, cfg, "input")
    if src is not None:
        try:
            gt = GroundTruth.from_json(_read_json(src, "ground truth"))
        except (KeyError, ValueError) as exc:
            raise CliError(f"invalid ground truth {src}: {exc}") from exc
    else:
        gt = imbalanced_system(int(_setting(args, cfg, "n_stations", 20)),
                               int(_setting(args, cfg, "bikes_per_station", 15)),
                               float(_setting(args, cfg, "base_rate", 0.05)), seed=seed)
    pings = generate(gt, days, seed, noise_fraction=float(_setting(args, cfg, "noise", 0.0)))
    with _open_out(out) as fh:
        write_pings(pings, fh)
    outputs = [out]
    truth = _setting(args, cfg, "truth")
    if truth is not None:
        gt.save(truth)
        outputs.append(truth)
    return {"seed": seed, "days": days}, {"input": src}, outputs


def cmd_extract_trips(args, cfg):
    from dockless.ingest import build_histories, extract_all, parse_pings, write_trips

    src = _require(_setting(args, cfg, "input"), "--input")
    out = _require(_setting(args, cfg, "output"), "--output")
    try:
        with open(src, newline="") as fh:
            pings, report = parse_pings(fh)
    except OSError as exc:
        raise CliError(f"cannot read {src}: {exc}") from exc
    histories = build_histories(pings, report)
    trips = extract_all(histories)
    report.write(sys.stderr)
    with _open_out(out) as fh:
        write_trips(trips, fh)
    log.info("%d pings, %d trips, %d bad rows", len(pings), len(trips), report.error_count)
    return {"rows_read": report.rows_read, "bad_rows": report.error_count}, {"input": src}, [out]


def _read_trip_file(path):
    from dockless.ingest import read_trips

    try:
        with open(path, newline="") as fh:
            return read_trips(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise CliError(f"invalid trips file {path}: {exc}") from exc


def cmd_cluster(args, cfg):
    from dockless.cluster import assign_initial_inventory, build_stations, segment_regions
    from dockless.ingest import build_histories, parse_pings, write_trips

    src = _require(_setting(args, cfg, "input"), "--input")
    out = _require(_setting(args, cfg, "output"), "--output")
    seed = int(_setting(args, cfg, "seed", 0))
    k = int(_setting(args, cfg, "k", 120))
    k_regions = int(_setting(args, cfg, "regions", 8))
    trips = _read_trip_file(src)
    if not trips:
        raise CliError("no trips to cluster")
    region = None
    if k_regions > 1:
        regions = segment_regions(trips, k_regions, seed)
        region = regions.largest()
        trips = regions.trips_in(trips, region)
    try:
        stations, annotated = build_stations(trips, k, seed, region)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    pings_path = _setting(args, cfg, "pings")
    if pings_path is not None:
        with open(pings_path, newline="") as fh:
            pings, _ = parse_pings(fh)
        hist = build_histories(pings)
        first = {b: h.pings[0] for b, h in hist.items() if h.pings}
        active = {tr.bike_id for tr in annotated}
        stations.initial_inventory = assign_initial_inventory(first, stations, active)
    stations.save(out)
    outputs = [out]
    trips_out = _setting(args, cfg, "trips_output")
    if trips_out is not None:
        with _open_out(trips_out) as fh:
            write_trips(annotated, fh, with_stations=True)
        outputs.append(trips_out)
    return {"seed": seed, "k": k, "regions": k_regions, "region": region}, \
        {"input": src, "pings": pings_path}, outputs


def _load_stations(path):
    from dockless.cluster import StationSet

    try:
        return StationSet.from_json(_read_json(path, "stations"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid station file {path}: {exc}") from exc


def _load_model(path):
    from dockless.demand import DemandModel

    try:
        return DemandModel.from_json(_read_json(path, "demand model"))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid demand model {path}: {exc}") from exc


def cmd_build_demand(args, cfg):
    from dockless.cluster import assign_stations
    from dockless.demand import estimate

    src = _require(_setting(args, cfg, "input"), "--input")
    st_path = _require(_setting(args, cfg, "stations"), "--stations")
    out = _require(_setting(args, cfg, "output"), "--output")
    stations = _load_stations(st_path)
    trips = _read_trip_file(src)
    if any(tr.origin_station is None or tr.dest_station is None for tr in trips):
        trips = assign_stations(trips, stations)
    try:
        model = estimate(trips, len(stations))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    model.save(out)
    return {"trips": len(trips)}, {"input": src, "stations": st_path}, [out]


def cmd_solve(args, cfg):
    from dockless.mip import ProblemInstance, solve

    src = _require(_setting(args, cfg, "input"), "--input")
    out = _require(_setting(args, cfg, "output"), "--output")
    try:
        inst = ProblemInstance.from_json(_read_json(src, "instance"))
        vehicles = _setting(args, cfg, "vehicles")
        if vehicles is not None:
            inst = inst.with_vehicles(int(vehicles[0] if isinstance(vehicles, list) else vehicles))
        alpha, beta = _setting(args, cfg, "alpha"), _setting(args, cfg, "beta")
        if alpha is not None or beta is not None:
            inst = inst.with_weights(inst.alpha if alpha is None else alpha,
                                     inst.beta if beta is None else beta)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid instance {src}: {exc}") from exc
    limit = _setting(args, cfg, "time_limit")
    plan = solve(inst, time_limit=None if limit is None else float(limit))
    doc = plan.to_json()
    doc["stats"].pop("elapsed_s", None)  # keep the output deterministic
    with _open_out(out) as fh:
        json.dump(doc, fh, indent=1)
    return {"vehicles": inst.vehicles, "alpha": str(inst.alpha), "beta": str(inst.beta)}, \
        {"input": src}, [out]


def _sim_inputs(args, cfg):
    st_path = _require(_setting(args, cfg, "stations"), "--stations")
    model_path = _require(_setting(args, cfg, "model"), "--model")
    stations, model = _load_stations(st_path), _load_model(model_path)
    if len(stations) != model.n_stations:
        raise CliError(f"{len(stations)} stations but the demand model has {model.n_stations}")
    return stations, model, {"stations": st_path, "model": model_path}


def cmd_simulate(args, cfg):
    from dockless.sim import run

    out = _require(_setting(args, cfg, "output"), "--output")
    stations, model, inputs = _sim_inputs(args, cfg)
    scfg = _strategy_config(args, cfg)
    factor = _setting(args, cfg, "fleet_factor", 1.0)
    if isinstance(factor, list):
        factor = factor[0]
    try:
        state = run(stations, model, scfg, float(factor))
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    with _open_out(out) as fh:
        state.write_csv(fh)
    log.info("lost demand %d, repositioning trips %d", state.lost_demand_total,
             state.reposition_trip_total)
    return {**scfg.to_dict(), "fleet_factor": float(factor)}, inputs, [out]


def cmd_sweep(args, cfg):
    from dockless.sim import sweep, write_sweep_csv

    out = _require(_setting(args, cfg, "output"), "--output")
    stations, model, inputs = _sim_inputs(args, cfg)
    scfg = _strategy_config(args, cfg)
    factors = _setting(args, cfg, "fleet_factor", None, "fleet_factor")
    if factors is None:
        factors = cfg.get("fleet_factors", [0.4, 0.6, 0.8, 1.0])
    counts = _setting(args, cfg, "vehicles", None)
    if counts is None:
        counts = cfg.get("vehicle_counts", [scfg.vehicles])
    factors = factors if isinstance(factors, list) else [factors]
    counts = counts if isinstance(counts, list) else [counts]
    replicates = int(_setting(args, cfg, "replicates", 1))
    workers = int(_setting(args, cfg, "workers", 1))
    try:
        rows = sweep(stations, model, scfg, [float(f) for f in factors], [int(v) for v in counts],
                     replicates, workers)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    with _open_out(out) as fh:
        write_sweep_csv(rows, fh)
    return {**scfg.to_dict(), "fleet_factors": factors, "vehicle_counts": counts,
            "replicates": replicates}, inputs, [out]


def cmd_report(args, cfg):
    from dockless.report import plot_sweeps, summarize, write_summary_csv
    from dockless.sim import read_sweep_csv

    srcs = _setting(args, cfg, "input")
    srcs = _require(srcs, "--input")
    srcs = srcs if isinstance(srcs, list) else [srcs]
    out = _require(_setting(args, cfg, "output"), "--output")
    sweeps = {}
    for p in srcs:
        try:
            with open(p, newline="") as fh:
                sweeps[Path(p).stem] = read_sweep_csv(fh)
        except OSError as exc:
            raise CliError(f"cannot read {p}: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise CliError(f"invalid sweep file {p}: {exc}") from exc
    summary = []
    for label, rows in sweeps.items():
        if not rows:
            raise CliError(f"sweep file for {label} has no rows")
        summary += summarize(rows, label)
    with _open_out(out) as fh:
        write_summary_csv(summary, fh)
    prefix = Path(out).with_suffix("")
    figures = plot_sweeps(sweeps, prefix)
    return {"labels": list(sweeps)}, {f"input{i}": p for i, p in enumerate(srcs)}, \
        [out] + [str(f) for f in figures]


COMMANDS = {
    "synth": cmd_synth,
    "extract-trips": cmd_extract_trips,
    "cluster": cmd_cluster,
    "build-demand": cmd_build_demand,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--output", help="output file")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    strategy = argparse.ArgumentParser(add_help=False)
    strategy.add_argument("--stations", help="StationSet JSON")
    strategy.add_argument("--model", help="demand model JSON")
    strategy.add_argument("--strategy", choices=["static", "dynamic"])
    strategy.add_argument("--iterations", type=int)
    strategy.add_argument("--alpha", type=str)
    strategy.add_argument("--beta", type=str)
    strategy.add_argument("-K", dest="K", type=int, help="planning scenarios")
    strategy.add_argument("--period", dest="T", type=int, help="rebalance period in hours")
    strategy.add_argument("--cap", type=int, help="vehicle capacity")

    p = argparse.ArgumentParser(prog="dockless", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"dockless {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", parents=[common], help="ground truth -> pings CSV")
    s.add_argument("--input", help="ground truth JSON (default: built-in imbalanced system)")
    s.add_argument("--days", type=int)
    s.add_argument("--n-stations", dest="n_stations", type=int)
    s.add_argument("--bikes-per-station", dest="bikes_per_station", type=int)
    s.add_argument("--base-rate", dest="base_rate", type=float)
    s.add_argument("--noise", type=float, help="noise ping fraction")
    s.add_argument("--truth", help="also write the ground truth JSON here")

    s = sub.add_parser("extract-trips", parents=[common], help="pings CSV -> trips CSV")
    s.add_argument("--input")

    s = sub.add_parser("cluster", parents=[common], help="trips CSV -> StationSet JSON")
    s.add_argument("--input")
    s.add_argument("--k", type=int, help="stations (default 120)")
    s.add_argument("--regions", type=int, help="regions (default 8; 1 skips segmentation)")
    s.add_argument("--pings", help="pings CSV for initial inventory")
    s.add_argument("--trips-output", dest="trips_output", help="station-annotated trips CSV")

    s = sub.add_parser("build-demand", parents=[common], help="trips + stations -> demand model")
    s.add_argument("--input")
    s.add_argument("--stations")

    s = sub.add_parser("solve", parents=[common], help="instance JSON -> plan JSON")
    s.add_argument("--input")
    s.add_argument("--vehicles", type=int, nargs=1)
    s.add_argument("--alpha", type=str)
    s.add_argument("--beta", type=str)
    s.add_argument("--time-limit", dest="time_limit", type=float)

    s = sub.add_parser("simulate", parents=[common, strategy], help="run one strategy")
    s.add_argument("--fleet-factor", dest="fleet_factor", type=float)
    s.add_argument("--vehicles", type=int)

    s = sub.add_parser("sweep", parents=[common, strategy], help="grid of simulations")
    s.add_argument("--fleet-factor", dest="fleet_factor", type=float, nargs="+")
    s.add_argument("--vehicles", type=int, nargs="+")
    s.add_argument("--replicates", type=int)
    s.add_argument("--workers", type=int)

    s = sub.add_parser("report", parents=[common], help="sweep CSV(s) -> summary CSV + figures")
    s.add_argument("--input", nargs="+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        manifest_cfg, inputs, outputs = COMMANDS[args.command](args, cfg)
        seed = _setting(args, cfg, "seed", 0)
        RunManifest(args.command, args.config, manifest_cfg, inputs, seed).write(outputs)
    except CliError as exc:
        print(f"dockless {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dockless {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
