"""Command-line front end: simulate / run / report.

Exit codes: 0 success, 2 configuration, 3 simulation, 4 transport,
5 estimation.  `ADAPTIVE_DSSE_SINK_URL`, `ADAPTIVE_DSSE_PMU_PORT` and
`ADAPTIVE_DSSE_INGEST_PORT` override the socket-mode endpoints.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import report as report_mod
from .errors import (
    EXIT_CONFIG,
    EXIT_ESTIMATION,
    EXIT_SIMULATION,
    EXIT_TRANSPORT,
    AdaptiveDsseError,
    ConfigError,
    EstimationError,
    PowerFlowError,
    TransportError,
)
from .network import NetworkModel, build_index
from .pipeline import run_estimation
from .pmu import emulate_stream, write_samples_jsonl
from .scenario import Scenario, load_scenario, run_scenario

__all__ = ["main", "build_parser"]

US = 1_000_000


def network_to_dict(model: NetworkModel) -> dict:
    return {
        "schema_version": 1,
        "base_voltage_v": model.base_voltage,
        "base_power_va": model.base_power,
        "slack": model.slack,
        "buses": list(model.buses),
        "branches": [
            {"id": b.id, "from": b.from_bus, "to": b.to_bus, "r": b.z.real, "x": b.z.imag}
            for b in model.branches
        ],
        "loads": [
            {"node": ld.node, "p": ld.s_nominal.real, "q": ld.s_nominal.imag,
             **({"breaker_id": ld.breaker_id} if ld.breaker_id else {})}
            for ld in model.loads
        ],
        "generators": [
            {"node": g.node, "p": g.s_nominal.real, "q": g.s_nominal.imag,
             **({"breaker_id": g.breaker_id} if g.breaker_id else {})}
            for g in model.generators
        ],
    }


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "schema_version": 1,
        "name": scenario.name,
        "network": network_to_dict(scenario.network),
        "duration": scenario.duration_us / US,
        "step": scenario.step_us / US,
        "start_soc": scenario.start_soc,
        "noise_seed": scenario.noise_seed,
        "events": [
            {"breaker_id": ev.breaker_id, "open_time": ev.open_us / US,
             "close_time": ev.close_us / US}
            for ev in scenario.events
        ],
        "pmus": [
            {"idcode": p.idcode, "station_name": p.station_name, "node": p.node,
             "snr_db": p.snr_db, "sigma_freq": p.sigma_freq, "sigma_rocof": p.sigma_rocof}
            for p in scenario.pmus
        ],
    }
    prof = scenario.frequency
    doc["frequency_profile"] = [[t / US, hz] for t, hz in zip(prof.t_us.tolist(), prof.hz.tolist())]
    if scenario.vo_settings:
        doc["vo"] = scenario.vo_settings
    if scenario.estimator_settings:
        doc["estimator"] = scenario.estimator_settings
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptive-dsse",
        description="Adaptive PMU streaming and distribution state estimation testbed",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="ground truth + recorded PMU streams")
    sim.add_argument("--scenario", required=True, help="scenario JSON file")
    sim.add_argument("--seed", type=int, default=None, help="override noise seed")
    sim.add_argument("--out", required=True, help="output directory")

    run = sub.add_parser("run", help="full pipeline, optionally both modes")
    run.add_argument("--scenario", required=True)
    run.add_argument("--mode", choices=["adaptive", "full_rate", "both"], default="both")
    run.add_argument("--transport", choices=["inprocess", "sockets"], default="inprocess")
    run.add_argument("--pacing", choices=["fast", "realtime"], default="fast")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="recompute the comparison report offline")
    rep.add_argument("--run-dir", required=True, help="directory produced by `run`")
    rep.add_argument("--out", default=None, help="file for the recomputed report JSON")
    return parser


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    seed = scenario.noise_seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    truth = run_scenario(scenario)
    truth.to_csv(out / "truth.csv")
    for pmu in scenario.pmus:
        samples = emulate_stream(truth, pmu, [seed, pmu.idcode])
        write_samples_jsonl(samples, out / f"pmu_{pmu.idcode}.jsonl")

    doc = scenario_to_dict(scenario)
    doc["noise_seed"] = seed
    (out / "scenario_resolved.json").write_text(json.dumps(doc, indent=2) + "\n")
    n = scenario.n_steps * len(scenario.pmus)
    print(f"simulate: {scenario.n_steps} steps, {len(scenario.pmus)} PMUs, "
          f"{n} samples -> {out}")
    return 0


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sink_url = os.environ.get("ADAPTIVE_DSSE_SINK_URL") or None
    pmu_port = int(os.environ.get("ADAPTIVE_DSSE_PMU_PORT", "0"))
    ingest_port = int(os.environ.get("ADAPTIVE_DSSE_INGEST_PORT", "0"))

    result = run_estimation(
        scenario,
        mode=args.mode,
        transport=args.transport,
        pacing=args.pacing,
        seed=args.seed,
        pmu_port_base=pmu_port,
        ingest_port=ingest_port,
        sink_url_override=sink_url,
    )

    doc = scenario_to_dict(scenario)
    if args.seed is not None:
        doc["noise_seed"] = args.seed
    (out / "scenario_resolved.json").write_text(json.dumps(doc, indent=2) + "\n")
    result.truth.to_csv(out / "truth.csv")
    for pmu in scenario.pmus:
        write_samples_jsonl(result.samples[pmu.idcode], out / f"pmu_{pmu.idcode}.jsonl")

    buses = result.truth.buses
    branch_ids = list(build_index(scenario.network).branch_ids)
    for mode, res in result.results.items():
        mdir = out / mode
        mdir.mkdir(exist_ok=True)
        merged = [m for ms in res.measurements.values() for m in ms]
        report_mod.write_measurements_jsonl(merged, mdir / "measurements.jsonl")
        report_mod.write_snapshots_csv(res.snapshots, buses, mdir / "snapshots.csv")
        report_mod.write_branches_csv(res.snapshots, branch_ids, mdir / "branches.csv")
        report_mod.write_snapshots_jsonl(res.snapshots, buses, mdir / "snapshots.jsonl")
        if mode == "adaptive":
            for vo_id, trace in res.traces.items():
                report_mod.write_rate_trace_csv(
                    trace, scenario.start_soc, mdir / f"rate_trace_{vo_id}.csv"
                )

    rep = report_mod.report_from_result(result)
    (out / "report.json").write_text(rep.to_json() + "\n")
    for line in rep.summary_lines():
        print(line)
    return 0


def _cmd_report(args) -> int:
    rep = report_mod.report_from_run_dir(args.run_dir)
    text = rep.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    for line in rep.summary_lines():
        print(line)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PowerFlowError as exc:
        print(f"error (simulation): {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except TransportError as exc:
        print(f"error (transport): {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except EstimationError as exc:
        print(f"error (estimation): {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except AdaptiveDsseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
