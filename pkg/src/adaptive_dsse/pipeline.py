"""End-to-end assembly: PMUs -> VOs -> coordinator -> estimator.

Two transports with identical content under fast pacing:

* ``inprocess`` - every sample still passes through the C37.118 codec
  (encode+decode), but frames and JSON measurements travel through direct
  calls; fully deterministic, the test/golden default.
* ``sockets``  - real TCP PMU servers, VO clients, and HTTP POST of JSON
  measurements to the coordinator's ``/measurements`` endpoint.

Modes: ``adaptive`` uses the rate controller as configured; ``full_rate``
runs the same machinery pinned at 50 fps (hold so large it never decays),
so both modes share every quantization step and can be compared
snapshot-for-snapshot.
"""

from __future__ import annotations

import json
import socket
import threading
from dataclasses import dataclass, field as dc_field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from . import c37118
from .coordinator import StreamCoordinator
from .dsse import (
    EstimationSnapshot,
    EstimatorSettings,
    MeasurementModel,
    build_model,
    pseudos_from_network,
)
from .errors import ConfigError, TransportError
from .pmu import PmuServer, SynchrophasorSample, emulate_stream
from .scenario import GroundTruthSeries, Scenario, run_scenario
from .vo import CallbackSink, HttpSink, Thresholds, VirtualObject, VoHttpServer, VoMeasurement

__all__ = [
    "ModeResult",
    "PipelineResult",
    "vo_id_for_node",
    "build_scenario_model",
    "run_estimation",
    "MeasurementIngestServer",
]

MODES = ("adaptive", "full_rate")
_FULL_RATE_HOLD = 2**31  # plateau never ends: permanent 50 fps


def vo_id_for_node(node: str) -> str:
    return f"vo-{node}"


@dataclass
class ModeResult:
    mode: str
    snapshots: list[EstimationSnapshot]
    measurements: dict[str, list[VoMeasurement]]  # forwarded, per vo_id
    traces: dict[str, list[dict]]  # per-input-frame controller trace
    input_counts: dict[str, int]
    forwarded_counts: dict[str, int]
    published_bytes: dict[str, int]
    dropped_counts: dict[str, int] = dc_field(default_factory=dict)


@dataclass
class PipelineResult:
    scenario: Scenario
    truth: GroundTruthSeries
    samples: dict[int, list[SynchrophasorSample]]  # per PMU idcode
    results: dict[str, ModeResult]


def _vo_thresholds(scenario: Scenario, vo_id: str) -> tuple[Thresholds, int]:
    """Global VO settings with optional per-VO override (paper: fixed policy
    for all VOs, reconfigurable per VO)."""
    settings = dict(scenario.vo_settings)
    per_vo = settings.pop("per_vo", {})
    settings.update(per_vo.get(vo_id, {}))
    initial = settings.pop("initial_rate", 1)
    return Thresholds(**settings), int(initial)


def build_scenario_model(scenario: Scenario) -> MeasurementModel:
    settings = EstimatorSettings.from_dict(scenario.estimator_settings)
    pseudos = pseudos_from_network(scenario.network, settings)
    pmu_nodes = [p.node for p in scenario.pmus]
    if len(set(pmu_nodes)) != len(pmu_nodes):
        raise ConfigError("duplicate PMU nodes in scenario deployment")
    return build_model(scenario.network, pmu_nodes, pseudos, settings)


def _make_vos(
    scenario: Scenario, mode: str, sink_factory
) -> tuple[list[VirtualObject], dict[str, str]]:
    vos = []
    vo_for_node = {}
    for pmu in scenario.pmus:
        vo_id = vo_id_for_node(pmu.node)
        vo_for_node[pmu.node] = vo_id
        thresholds, initial = _vo_thresholds(scenario, vo_id)
        if mode == "full_rate":
            thresholds = Thresholds(
                alpha_up=thresholds.alpha_up,
                beta_up=thresholds.beta_up,
                gamma_up=thresholds.gamma_up,
                beta_down=thresholds.beta_down,
                hold_frames=_FULL_RATE_HOLD,
            )
            initial = 50
        vos.append(
            VirtualObject(
                vo_id=vo_id,
                node=pmu.node,
                sink=sink_factory(vo_id),
                thresholds=thresholds,
                initial_rate=initial,
                frame_us=scenario.step_us,
            )
        )
    return vos, vo_for_node


def _collect_mode_result(mode, vos, snapshots, recorded) -> ModeResult:
    return ModeResult(
        mode=mode,
        snapshots=snapshots,
        measurements=recorded,
        traces={vo.vo_id: vo.trace for vo in vos},
        input_counts={vo.vo_id: vo.input_count for vo in vos},
        forwarded_counts={vo.vo_id: vo.forwarded_count for vo in vos},
        published_bytes={vo.vo_id: vo.published_bytes for vo in vos},
        dropped_counts={vo.vo_id: vo.dropped_count for vo in vos},
    )


# ---------------------------------------------------------------------------
# In-process transport.


def _run_mode_inprocess(
    scenario: Scenario,
    samples: dict[int, list[SynchrophasorSample]],
    model: MeasurementModel,
    mode: str,
    backend: Optional[str],
) -> ModeResult:
    recorded: dict[str, list[VoMeasurement]] = {}

    coordinator_holder: dict[str, StreamCoordinator] = {}

    def sink_factory(vo_id: str):
        recorded[vo_id] = []

        def deliver(m: VoMeasurement) -> None:
            recorded[vo_id].append(m)
            coordinator_holder["c"].submit(m)

        return CallbackSink(deliver)

    vos, vo_for_node = _make_vos(scenario, mode, sink_factory)
    coordinator_holder["c"] = StreamCoordinator(
        model, vo_for_node, frame_us=scenario.step_us, backend=backend
    )

    cfg2 = {
        pmu.idcode: c37118.make_config2(pmu.idcode, pmu.station_name, data_rate=50)
        for pmu in scenario.pmus
    }
    n = scenario.n_steps
    pmu_list = list(scenario.pmus)
    for k in range(n):
        for pmu, vo in zip(pmu_list, vos):
            sample = samples[pmu.idcode][k]
            # full codec round trip even in-process: identical quantization
            # to the socket transport.
            frame = c37118.decode_frame(c37118.encode_data(sample, cfg2[pmu.idcode]))
            vo.ingest_frames([frame])
    coord = coordinator_holder["c"]
    for vo in vos:
        coord.end_stream(vo.vo_id)
    snapshots = coord.finish()
    return _collect_mode_result(mode, vos, snapshots, recorded)


# ---------------------------------------------------------------------------
# Socket transport.


class MeasurementIngestServer:
    """HTTP endpoint accepting VoMeasurement JSON at POST /measurements."""

    def __init__(self, coordinator: StreamCoordinator, host: str = "127.0.0.1", port: int = 0):
        outer_coord = coordinator

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                if self.path.rstrip("/") != "/measurements":
                    self.send_error(404)
                    return
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    doc = json.loads(self.rfile.read(length))
                    outer_coord.submit(VoMeasurement.from_dict(doc))
                except Exception as exc:  # report, do not crash the server
                    self.send_response(400)
                    body = json.dumps({"error": str(exc)}).encode()
                else:
                    self.send_response(200)
                    body = b'{"status": "ok"}'
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self.host, self.port = self._server.server_address[:2]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/measurements"

    def start(self) -> "MeasurementIngestServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="dsse-ingest", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def _vo_client(vo: VirtualObject, host: str, port: int) -> None:
    """Connect to a PMU server, handshake, and ingest its frame stream."""
    try:
        sock = socket.create_connection((host, port), timeout=10.0)
    except OSError as exc:
        raise TransportError(f"VO {vo.vo_id}: cannot reach PMU at {host}:{port}: {exc}")
    try:
        sock.sendall(c37118.encode_command(0, c37118.CMD_SEND_CFG2))
        sock.sendall(c37118.encode_command(0, c37118.CMD_DATA_ON))
        sock.settimeout(10.0)

        def chunks():
            while True:
                try:
                    data = sock.recv(4096)
                except socket.timeout:
                    return
                except OSError:
                    return
                if not data:
                    return
                yield data

        vo.ingest_frames(c37118.frame_stream(chunks()))
    finally:
        try:
            sock.close()
        except OSError:
            pass


def _run_mode_sockets(
    scenario: Scenario,
    samples: dict[int, list[SynchrophasorSample]],
    model: MeasurementModel,
    mode: str,
    pacing: str,
    backend: Optional[str],
    pmu_port_base: int = 0,
    ingest_port: int = 0,
    sink_url_override: Optional[str] = None,
) -> ModeResult:
    servers = []
    vo_http: list[VoHttpServer] = []
    ingest = None
    try:
        for i, pmu in enumerate(scenario.pmus):
            port = 0 if pmu_port_base == 0 else pmu_port_base + i
            servers.append(
                PmuServer(
                    samples[pmu.idcode], pmu, port=port, pacing=pacing,
                    frame_us=scenario.step_us,
                ).start()
            )

        recorded: dict[str, list[VoMeasurement]] = {}
        coordinator_holder: dict[str, StreamCoordinator] = {}

        def sink_factory(vo_id: str):
            recorded[vo_id] = []
            url = sink_url_override or coordinator_holder["ingest_url"]

            class RecordingHttpSink(HttpSink):
                def publish(self, measurement: VoMeasurement) -> bool:
                    ok = super().publish(measurement)
                    if ok:
                        recorded[vo_id].append(measurement)
                    return ok

            return RecordingHttpSink(url)

        vos, vo_for_node = _make_vos(scenario, mode, lambda vo_id: None)
        coordinator = StreamCoordinator(
            model, vo_for_node, frame_us=scenario.step_us, backend=backend
        )
        ingest = MeasurementIngestServer(coordinator, port=ingest_port).start()
        coordinator_holder["ingest_url"] = ingest.url
        for vo in vos:
            vo.sink = sink_factory(vo.vo_id)
            vo_http.append(VoHttpServer(vo).start())

        threads = []
        for server, vo in zip(servers, vos):
            th = threading.Thread(
                target=_vo_client, args=(vo, server.host, server.port),
                name=f"vo-client-{vo.vo_id}", daemon=True,
            )
            th.start()
            threads.append(th)
        for th in threads:
            th.join()
        for vo in vos:
            coordinator.end_stream(vo.vo_id)
        snapshots = coordinator.finish()
        return _collect_mode_result(mode, vos, snapshots, recorded)
    finally:
        for s in servers:
            s.stop()
        for h in vo_http:
            h.stop()
        if ingest is not None:
            ingest.stop()


# ---------------------------------------------------------------------------
# Entry point.


def run_estimation(
    scenario: Scenario,
    mode: str = "both",
    transport: str = "inprocess",
    pacing: str = "fast",
    seed: Optional[int] = None,
    backend: Optional[str] = None,
    pmu_port_base: int = 0,
    ingest_port: int = 0,
    sink_url_override: Optional[str] = None,
) -> PipelineResult:
    """Run the full pipeline; `mode="both"` runs adaptive and full-rate with
    identical seeds over identical PMU sample streams."""
    if mode not in MODES + ("both",):
        raise ConfigError(f"mode {mode!r} not in {MODES + ('both',)}")
    if transport not in ("inprocess", "sockets"):
        raise ConfigError(f"transport {transport!r} not in ('inprocess', 'sockets')")
    if pacing not in ("fast", "realtime"):
        raise ConfigError(f"pacing {pacing!r} not in ('fast', 'realtime')")

    noise_seed = scenario.noise_seed if seed is None else int(seed)
    truth = run_scenario(scenario, backend=backend)
    samples = {
        pmu.idcode: emulate_stream(truth, pmu, [noise_seed, pmu.idcode])
        for pmu in scenario.pmus
    }
    model = build_scenario_model(scenario)

    wanted = MODES if mode == "both" else (mode,)
    results = {}
    for m in wanted:
        if transport == "inprocess":
            results[m] = _run_mode_inprocess(scenario, samples, model, m, backend)
        else:
            results[m] = _run_mode_sockets(
                scenario, samples, model, m, pacing, backend,
                pmu_port_base=pmu_port_base, ingest_port=ingest_port,
                sink_url_override=sink_url_override,
            )
    return PipelineResult(scenario=scenario, truth=truth, samples=samples, results=results)
