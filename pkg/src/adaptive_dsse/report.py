"""Comparison reporting and run-artifact IO (CSV / JSON-lines)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

from .dsse import EstimationSnapshot
from .errors import ConfigError
from .vo import VoMeasurement

__all__ = [
    "ComparisonReport",
    "compute_report",
    "report_from_result",
    "report_from_run_dir",
    "write_snapshots_csv",
    "write_branches_csv",
    "write_snapshots_jsonl",
    "write_measurements_jsonl",
    "read_measurements_jsonl",
    "write_rate_trace_csv",
]

US = 1_000_000


@dataclass
class ComparisonReport:
    scenario_name: str
    modes: list[str]
    rmse_v: dict  # mode -> bus -> RMSE of |V| vs truth
    max_abs_err_v: dict  # mode -> bus -> max |V| error
    input_counts: dict  # mode -> vo -> frames in
    forwarded_counts: dict  # mode -> vo -> frames forwarded
    published_bytes: dict  # mode -> vo -> JSON bytes out
    bandwidth_ratio: float  # adaptive bytes / full-rate bytes
    bandwidth_ratio_estimated: bool
    rate_trace: dict  # vo -> [[t_abs_us, rr], ...] (adaptive mode)
    detection_latencies: dict  # vo -> event label -> frames (-1 = not seen)
    snapshot_counts: dict  # mode -> count
    warnings: list = dc_field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_lines(self) -> list[str]:
        out = [f"scenario: {self.scenario_name}"]
        for mode in self.modes:
            fwd = sum(self.forwarded_counts.get(mode, {}).values())
            inp = sum(self.input_counts.get(mode, {}).values())
            out.append(f"[{mode}] snapshots={self.snapshot_counts.get(mode, 0)} "
                       f"forwarded={fwd}/{inp} frames")
            rmse = self.rmse_v.get(mode, {})
            if rmse:
                worst = max(rmse, key=rmse.get)
                out.append(f"[{mode}] worst-node RMSE |V| = {rmse[worst]:.2e} p.u. at {worst}")
        tag = " (estimated)" if self.bandwidth_ratio_estimated else ""
        out.append(f"bandwidth ratio (adaptive/full-rate bytes) = "
                   f"{self.bandwidth_ratio:.4f}{tag}")
        for vo, lat in sorted(self.detection_latencies.items()):
            pretty = ", ".join(f"{ev}: {fr}f" for ev, fr in lat.items())
            out.append(f"latency [{vo}] {pretty}")
        for w in self.warnings:
            out.append(f"warning: {w}")
        return out


def measurement_bytes(m_dict: dict) -> int:
    return len(json.dumps(m_dict))


# ---------------------------------------------------------------------------
# Report computation over plain data (shared by live runs and file replay).


def compute_report(
    scenario_name: str,
    start_soc: int,
    step_us: int,
    events: list[tuple[str, int]],  # (label, t_us relative to scenario start)
    truth_vmag: dict[tuple[int, int], dict[str, float]],  # (soc, frac) -> bus -> |V|
    mode_snapshots: dict[str, list[tuple[int, int, dict[str, float]]]],
    mode_measurements: dict[str, list[dict]],
    adaptive_traces: dict[str, list[dict]],
) -> ComparisonReport:
    modes = sorted(mode_snapshots)
    warnings: list[str] = []

    rmse_v: dict = {}
    max_err: dict = {}
    snapshot_counts: dict = {}
    for mode, snaps in mode_snapshots.items():
        snapshot_counts[mode] = len(snaps)
        acc: dict[str, list[float]] = {}
        for soc, frac, vmap in snaps:
            tr = truth_vmag.get((soc, frac))
            if tr is None:
                raise ConfigError(
                    f"timestamp mismatch: snapshot at soc={soc} frac={frac} "
                    f"has no ground-truth row"
                )
            for bus, vm in vmap.items():
                acc.setdefault(bus, []).append(vm - tr[bus])
        rmse_v[mode] = {
            bus: math.sqrt(sum(e * e for e in errs) / len(errs))
            for bus, errs in sorted(acc.items())
        }
        max_err[mode] = {
            bus: max(abs(e) for e in errs) for bus, errs in sorted(acc.items())
        }

    input_counts: dict = {}
    forwarded_counts: dict = {}
    published: dict = {}
    for mode, ms in mode_measurements.items():
        per_in: dict[str, int] = {}
        per_fwd: dict[str, int] = {}
        per_bytes: dict[str, int] = {}
        for m in ms:
            vo = m["vo_id"]
            per_fwd[vo] = per_fwd.get(vo, 0) + 1
            per_bytes[vo] = per_bytes.get(vo, 0) + measurement_bytes(m)
        forwarded_counts[mode] = per_fwd
        published[mode] = per_bytes
        trace_src = adaptive_traces if mode == "adaptive" else None
        if trace_src:
            per_in = {vo: len(rows) for vo, rows in trace_src.items()}
        input_counts[mode] = per_in
    if "full_rate" in mode_measurements:
        # full-rate forwards every input frame by construction
        input_counts["full_rate"] = dict(forwarded_counts.get("full_rate", {}))

    estimated = False
    if "adaptive" in published and "full_rate" in published:
        num = sum(published["adaptive"].values())
        den = sum(published["full_rate"].values())
        ratio = num / den if den else 1.0
    elif "full_rate" in published:
        ratio = 1.0
    elif "adaptive" in published:
        # no full-rate run: estimate its bytes from the adaptive stream's
        # mean measurement size scaled to every input frame
        estimated = True
        num = sum(published["adaptive"].values())
        fwd = sum(forwarded_counts["adaptive"].values())
        inp = sum(input_counts["adaptive"].values()) or fwd
        ratio = (num / (num / fwd * inp)) if fwd else 1.0
    else:
        ratio = 1.0

    rate_trace: dict = {}
    for vo, rows in sorted(adaptive_traces.items()):
        rate_trace[vo] = [
            [start_soc * US + int(r["t_us"]), int(r["rr"])] for r in rows
        ]

    detection: dict = {}
    adaptive_ms = mode_measurements.get("adaptive", [])
    by_vo: dict[str, list[dict]] = {}
    for m in adaptive_ms:
        by_vo.setdefault(m["vo_id"], []).append(m)
    for vo, ms in sorted(by_vo.items()):
        lat: dict[str, int] = {}
        for label, ev_t in events:
            ev_abs = start_soc * US + ev_t
            hit = None
            for m in ms:
                t_abs = int(m["soc"]) * US + int(m["frac_us"])
                if t_abs >= ev_abs and int(m["rr"]) == 50:
                    hit = (t_abs - ev_abs) // step_us
                    break
            lat[label] = int(hit) if hit is not None else -1
        detection[vo] = lat

    for mode, ms in mode_measurements.items():
        ticks = len({(m["soc"], m["frac_us"]) for m in ms})
        have = snapshot_counts.get(mode, 0)
        if have < ticks:
            warnings.append(
                f"{mode}: only {have} snapshots for {ticks} measurement ticks "
                f"(truncated recording? partial report)"
            )

    return ComparisonReport(
        scenario_name=scenario_name,
        modes=modes,
        rmse_v=rmse_v,
        max_abs_err_v=max_err,
        input_counts=input_counts,
        forwarded_counts=forwarded_counts,
        published_bytes=published,
        bandwidth_ratio=ratio,
        bandwidth_ratio_estimated=estimated,
        rate_trace=rate_trace,
        detection_latencies=detection,
        snapshot_counts=snapshot_counts,
        warnings=warnings,
    )


def report_from_result(result) -> ComparisonReport:
    """Compute the comparison report from an in-memory PipelineResult."""
    scenario = result.scenario
    truth = result.truth
    soc_arr, frac_arr = truth.soc_frac()
    truth_vmag: dict[tuple[int, int], dict[str, float]] = {}
    for k in range(len(truth.t_us)):
        truth_vmag[(int(soc_arr[k]), int(frac_arr[k]))] = {
            bus: float(abs(truth.v[k, j])) for j, bus in enumerate(truth.buses)
        }

    events = []
    for ev in scenario.events:
        events.append((f"{ev.breaker_id}:open", ev.open_us))
        events.append((f"{ev.breaker_id}:close", ev.close_us))
    events.sort(key=lambda e: e[1])

    mode_snapshots: dict = {}
    mode_measurements: dict = {}
    traces: dict = {}
    for mode, res in result.results.items():
        mode_snapshots[mode] = [
            (s.soc, s.frac, {bus: float(abs(s.node_v[j])) for j, bus in enumerate(truth.buses)})
            for s in res.snapshots
        ]
        merged = sorted(
            (m for ms in res.measurements.values() for m in ms),
            key=lambda m: (m.t_us, m.vo_id),
        )
        mode_measurements[mode] = [m.to_dict() for m in merged]
        if mode == "adaptive":
            traces = {vo: rows for vo, rows in res.traces.items()}

    return compute_report(
        scenario_name=scenario.name,
        start_soc=scenario.start_soc,
        step_us=scenario.step_us,
        events=events,
        truth_vmag=truth_vmag,
        mode_snapshots=mode_snapshots,
        mode_measurements=mode_measurements,
        adaptive_traces=traces,
    )


# ---------------------------------------------------------------------------
# Artifact writers.


def write_snapshots_csv(snapshots: list[EstimationSnapshot], buses: list[str], path) -> None:
    with open(path, "w") as fh:
        fh.write("soc,frac,bus,v_mag,v_angle\n")
        for s in snapshots:
            for j, bus in enumerate(buses):
                v = complex(s.node_v[j])
                fh.write(f"{s.soc},{s.frac},{bus},{abs(v)!r},{math.atan2(v.imag, v.real)!r}\n")


def write_branches_csv(snapshots: list[EstimationSnapshot], branch_ids: list[str], path) -> None:
    with open(path, "w") as fh:
        fh.write("soc,frac,branch,i_re,i_im\n")
        for s in snapshots:
            for b, bid in enumerate(branch_ids):
                fh.write(
                    f"{s.soc},{s.frac},{bid},"
                    f"{float(s.x_hat[2 + 2 * b])!r},{float(s.x_hat[3 + 2 * b])!r}\n"
                )


def write_snapshots_jsonl(snapshots: list[EstimationSnapshot], buses: list[str], path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", "buses": buses}) + "\n")
        for s in snapshots:
            fh.write(
                json.dumps(
                    {
                        "soc": s.soc,
                        "frac": s.frac,
                        "v_re": [float(v.real) for v in s.node_v],
                        "v_im": [float(v.imag) for v in s.node_v],
                        "ages": s.ages,
                    }
                )
                + "\n"
            )


def write_measurements_jsonl(measurements: list[VoMeasurement], path) -> None:
    """One JSON object per forwarded measurement, ordered by (t, vo)."""
    rows = sorted(measurements, key=lambda m: (m.t_us, m.vo_id))
    with open(path, "w") as fh:
        for m in rows:
            fh.write(json.dumps(m.to_dict()) + "\n")


def read_measurements_jsonl(path) -> list[VoMeasurement]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(VoMeasurement.from_dict(json.loads(line)))
    return out


def write_rate_trace_csv(trace: list[dict], start_soc: int, path) -> None:
    with open(path, "w") as fh:
        fh.write("soc,frac,v_mag,alpha,beta,gamma,rr,forwarded,trigger\n")
        for r in trace:
            t = int(r["t_us"])
            soc = start_soc + t // US
            frac = t % US
            fh.write(
                f"{soc},{frac},{r['v_mag']!r},{r['alpha']!r},{r['beta']!r},"
                f"{r['gamma']!r},{r['rr']},{int(r['forwarded'])},{r['trigger']}\n"
            )


def read_rate_trace_csv(path, start_soc: int) -> list[dict]:
    rows = []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        soc, frac, v_mag, alpha, beta, gamma, rr, forwarded, trigger = line.split(",")
        rows.append(
            {
                "t_us": (int(soc) - start_soc) * US + int(frac),
                "v_mag": float(v_mag),
                "alpha": float(alpha),
                "beta": float(beta),
                "gamma": float(gamma),
                "rr": int(rr),
                "forwarded": bool(int(forwarded)),
                "trigger": trigger,
            }
        )
    return rows


def read_snapshots_csv(path) -> list[tuple[int, int, dict[str, float]]]:
    by_ts: dict[tuple[int, int], dict[str, float]] = {}
    order: list[tuple[int, int]] = []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        soc, frac, bus, v_mag, _v_angle = line.split(",")
        key = (int(soc), int(frac))
        if key not in by_ts:
            by_ts[key] = {}
            order.append(key)
        by_ts[key][bus] = float(v_mag)
    return [(soc, frac, by_ts[(soc, frac)]) for soc, frac in order]


def read_truth_csv(path) -> dict[tuple[int, int], dict[str, float]]:
    out: dict[tuple[int, int], dict[str, float]] = {}
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        soc, frac, bus, v_re, v_im, _f, _r = line.split(",")
        out.setdefault((int(soc), int(frac)), {})[bus] = abs(
            complex(float(v_re), float(v_im))
        )
    return out


# ---------------------------------------------------------------------------
# Offline recomputation from a run directory (cmd_report).


def report_from_run_dir(run_dir) -> ComparisonReport:
    run_dir = Path(run_dir)
    scen_path = run_dir / "scenario_resolved.json"
    if not scen_path.is_file():
        raise ConfigError(f"{run_dir}: missing scenario_resolved.json (not a run dir?)")
    doc = json.loads(scen_path.read_text())
    start_soc = int(doc.get("start_soc", 0))
    step_us = int(round(doc.get("step", 0.02) * US))
    events = []
    for ev in doc.get("events", []):
        events.append((f"{ev['breaker_id']}:open", int(round(ev["open_time"] * US))))
        events.append((f"{ev['breaker_id']}:close", int(round(ev["close_time"] * US))))
    events.sort(key=lambda e: e[1])

    truth_path = run_dir / "truth.csv"
    if not truth_path.is_file():
        raise ConfigError(f"{run_dir}: missing truth.csv")
    truth_vmag = read_truth_csv(truth_path)

    mode_snapshots: dict = {}
    mode_measurements: dict = {}
    traces: dict = {}
    for mode in ("adaptive", "full_rate"):
        mdir = run_dir / mode
        if not mdir.is_dir():
            continue
        mode_snapshots[mode] = read_snapshots_csv(mdir / "snapshots.csv")
        mode_measurements[mode] = [
            m.to_dict() for m in read_measurements_jsonl(mdir / "measurements.jsonl")
        ]
        if mode == "adaptive":
            for tr_path in sorted(mdir.glob("rate_trace_*.csv")):
                vo = tr_path.stem.replace("rate_trace_", "", 1)
                traces[vo] = read_rate_trace_csv(tr_path, start_soc)
    if not mode_snapshots:
        raise ConfigError(f"{run_dir}: no mode subdirectories with snapshots found")

    return compute_report(
        scenario_name=doc.get("name", "scenario"),
        start_soc=start_soc,
        step_us=step_us,
        events=events,
        truth_vmag=truth_vmag,
        mode_snapshots=mode_snapshots,
        mode_measurements=mode_measurements,
        adaptive_traces=traces,
    )
