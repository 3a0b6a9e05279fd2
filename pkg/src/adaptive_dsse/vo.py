"""Virtual object: adaptive reporting-rate control over a PMU frame stream.

The controller watches three per-frame metrics,

* alpha - relative |V| change between two consecutive *input* samples,
* beta  - relative |V| change between the input and the last *forwarded*
  sample,
* gamma - |ROCOF| of the input sample,

jumps to 50 frames/s the moment any of them exceeds its up-threshold
(forwarding that very sample), and, once beta stays below the calm
threshold for `hold_frames` consecutive input frames, steps the reporting
rate down one level at a time through 50 -> 25 -> 10 -> 1.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterable, Optional

from . import c37118
from .errors import ConfigError, MonotonicityError
from .pmu import FRAME_US, SynchrophasorSample

__all__ = [
    "RATE_VALUES",
    "RateLevel",
    "Thresholds",
    "RateControllerState",
    "StepDecision",
    "compute_metrics",
    "step_controller",
    "VoMeasurement",
    "VirtualObject",
    "CallbackSink",
    "HttpSink",
    "VoHttpServer",
]

RATE_VALUES = (50, 25, 10, 1)  # frames/s, descending


@dataclass(frozen=True)
class RateLevel:
    value: int = 50

    def __post_init__(self):
        if self.value not in RATE_VALUES:
            raise ConfigError(f"reporting rate {self.value} not in {RATE_VALUES}")

    @property
    def decimation(self) -> int:
        return 50 // self.value

    def step_down(self) -> "RateLevel":
        i = RATE_VALUES.index(self.value)
        if i + 1 < len(RATE_VALUES):
            return RateLevel(RATE_VALUES[i + 1])
        return self


@dataclass(frozen=True)
class Thresholds:
    alpha_up: float = 0.02  # relative fraction
    beta_up: float = 0.02
    gamma_up: float = 5.0  # Hz/s
    beta_down: float = 0.001
    hold_frames: int = 50

    def __post_init__(self):
        if min(self.alpha_up, self.beta_up, self.gamma_up, self.beta_down) <= 0:
            raise ConfigError("all thresholds must be positive")
        if self.beta_down >= self.beta_up:
            raise ConfigError("beta_down must be below beta_up")
        if self.hold_frames < 1:
            raise ConfigError("hold_frames must be >= 1")


@dataclass(frozen=True)
class RateControllerState:
    current: RateLevel
    last_input: Optional[SynchrophasorSample] = None
    last_forwarded: Optional[SynchrophasorSample] = None
    calm_count: int = 0
    phase_anchor_us: Optional[int] = None  # timestamp of the last forwarded sample

    @classmethod
    def fresh(cls, rate: int = 50) -> "RateControllerState":
        return cls(current=RateLevel(rate))


@dataclass(frozen=True)
class StepDecision:
    forwarded: bool
    trigger: str  # "none" | "alpha" | "beta" | "gamma"
    alpha: float
    beta: float
    gamma: float
    rate: int  # level in force when the decision was made


def _rel_change(mag: float, ref_mag: float) -> float:
    if ref_mag == 0.0:
        return float("inf")  # degenerate network state: force a trigger
    return abs(mag - ref_mag) / ref_mag


def compute_metrics(
    state: RateControllerState, sample: SynchrophasorSample
) -> tuple[float, float, float]:
    """(alpha, beta, gamma) for one input sample; alpha/beta are 0 at start."""
    mag = abs(sample.v)
    alpha = 0.0 if state.last_input is None else _rel_change(mag, abs(state.last_input.v))
    beta = (
        0.0
        if state.last_forwarded is None
        else _rel_change(mag, abs(state.last_forwarded.v))
    )
    gamma = abs(sample.rocof)
    return alpha, beta, gamma


def step_controller(
    state: RateControllerState,
    sample: SynchrophasorSample,
    thresholds: Thresholds,
    frame_us: int = FRAME_US,
) -> tuple[RateControllerState, StepDecision]:
    """Advance the controller by one input sample.

    Raises MonotonicityError on out-of-order/duplicate timestamps; a gap of
    more than one frame resets to 50 fps with empty history (observe densely
    after blindness).
    """
    if state.last_input is not None:
        dt = sample.t_us - state.last_input.t_us
        if dt <= 0:
            raise MonotonicityError(
                f"sample at {sample.t_us} us not after {state.last_input.t_us} us"
            )
        if dt != frame_us:
            state = RateControllerState.fresh(rate=50)

    alpha, beta, gamma = compute_metrics(state, sample)

    if alpha > thresholds.alpha_up:
        trigger = "alpha"
    elif beta > thresholds.beta_up:
        trigger = "beta"
    elif gamma > thresholds.gamma_up:
        trigger = "gamma"
    else:
        trigger = "none"

    if trigger != "none":
        new_state = replace(
            state,
            current=RateLevel(50),
            last_input=sample,
            last_forwarded=sample,
            calm_count=0,
            phase_anchor_us=sample.t_us,
        )
        return new_state, StepDecision(True, trigger, alpha, beta, gamma, 50)

    level = state.current
    calm = state.calm_count + 1 if beta < thresholds.beta_down else 0
    if calm >= thresholds.hold_frames:
        level = level.step_down()
        calm = 0

    if state.phase_anchor_us is None:
        forwarded = True  # first sample: report on startup, anchor the grid
    else:
        forwarded = (sample.t_us - state.phase_anchor_us) % (
            level.decimation * frame_us
        ) == 0

    new_state = replace(
        state,
        current=level,
        last_input=sample,
        last_forwarded=sample if forwarded else state.last_forwarded,
        calm_count=calm,
        phase_anchor_us=sample.t_us if forwarded else state.phase_anchor_us,
    )
    return new_state, StepDecision(forwarded, "none", alpha, beta, gamma, level.value)


# ---------------------------------------------------------------------------
# Egress record and sinks.


@dataclass(frozen=True)
class VoMeasurement:
    vo_id: str
    node: str
    soc: int
    frac_us: int
    v_re: float
    v_im: float
    freq: float
    rocof: float
    rr: int
    trigger: str

    @property
    def t_us(self) -> int:
        return self.soc * 1_000_000 + self.frac_us

    def to_dict(self) -> dict:
        return {
            "vo_id": self.vo_id,
            "node": self.node,
            "soc": self.soc,
            "frac_us": self.frac_us,
            "v_re": self.v_re,
            "v_im": self.v_im,
            "freq": self.freq,
            "rocof": self.rocof,
            "rr": self.rr,
            "trigger": self.trigger,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VoMeasurement":
        return cls(
            vo_id=str(d["vo_id"]),
            node=str(d["node"]),
            soc=int(d["soc"]),
            frac_us=int(d["frac_us"]),
            v_re=float(d["v_re"]),
            v_im=float(d["v_im"]),
            freq=float(d["freq"]),
            rocof=float(d["rocof"]),
            rr=int(d["rr"]),
            trigger=str(d["trigger"]),
        )


class CallbackSink:
    """In-process sink; delivery = calling a function (exceptions = failure)."""

    def __init__(self, fn: Callable[[VoMeasurement], None]):
        self._fn = fn

    def publish(self, measurement: VoMeasurement) -> bool:
        self._fn(measurement)
        return True


class HttpSink:
    """POSTs one JSON object per measurement to the configured URL."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def publish(self, measurement: VoMeasurement) -> bool:
        payload = json.dumps(measurement.to_dict()).encode()
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return 200 <= resp.status < 300
        except (urllib.error.URLError, OSError):
            return False


class VirtualObject:
    """One VO: decodes its PMU stream, adapts the rate, publishes JSON."""

    def __init__(
        self,
        vo_id: str,
        node: str,
        sink,
        thresholds: Thresholds = Thresholds(),
        initial_rate: int = 1,
        fnom: float = 50.0,
        publish_retries: int = 3,
        frame_us: int = FRAME_US,
    ):
        self.vo_id = vo_id
        self.node = node
        self.sink = sink
        self.thresholds = thresholds
        self.fnom = fnom
        self.publish_retries = publish_retries
        self.frame_us = frame_us
        self.state = RateControllerState.fresh(rate=initial_rate)
        self.latest: Optional[VoMeasurement] = None
        self.input_count = 0
        self.forwarded_count = 0
        self.dropped_count = 0
        self.retry_count = 0
        self.published_bytes = 0
        self.trace: list[dict] = []  # one row per input frame (plot-ready)
        self._lock = threading.Lock()

    # -- ingestion -----------------------------------------------------------

    def ingest_sample(self, sample: SynchrophasorSample) -> Optional[VoMeasurement]:
        """Run the controller on one sample; publish and return if forwarded."""
        self.state, decision = step_controller(
            self.state, sample, self.thresholds, self.frame_us
        )
        self.input_count += 1
        measurement = VoMeasurement(
            vo_id=self.vo_id,
            node=self.node,
            soc=sample.soc,
            frac_us=sample.frac,
            v_re=sample.v.real,
            v_im=sample.v.imag,
            freq=sample.freq,
            rocof=sample.rocof,
            rr=decision.rate,
            trigger=decision.trigger,
        )
        with self._lock:
            self.latest = measurement
        self.trace.append(
            {
                "t_us": sample.t_us,
                "v_mag": abs(sample.v),
                "alpha": decision.alpha,
                "beta": decision.beta,
                "gamma": decision.gamma,
                "rr": decision.rate,
                "forwarded": decision.forwarded,
                "trigger": decision.trigger,
            }
        )
        if not decision.forwarded:
            return None
        self.forwarded_count += 1
        self.publish(measurement)
        return measurement

    def ingest_frames(self, frames: Iterable) -> None:
        """Consume decoded frames; only data frames matter here."""
        for frame in frames:
            if isinstance(frame, c37118.ConfigFrame2):
                self.fnom = frame.fnom
                continue
            if not isinstance(frame, c37118.DataFrame):
                continue
            sample = SynchrophasorSample(
                soc=frame.header.soc,
                frac=frame.header.fracsec,
                v=frame.phasor,
                freq=self.fnom + frame.freq_dev,
                rocof=frame.rocof,
            )
            self.ingest_sample(sample)

    # -- egress ----------------------------------------------------------------

    def publish(self, measurement: VoMeasurement) -> bool:
        """Deliver with bounded retry; drop (and count) rather than block."""
        attempts = self.publish_retries + 1
        for attempt in range(attempts):
            try:
                ok = self.sink.publish(measurement)
            except Exception:
                ok = False
            if ok:
                self.published_bytes += len(json.dumps(measurement.to_dict()))
                return True
            if attempt < attempts - 1:
                self.retry_count += 1
        self.dropped_count += 1
        return False

    def serve_latest(self) -> Optional[VoMeasurement]:
        """Newest *input* measurement (bypasses decimation); None until data."""
        with self._lock:
            return self.latest


# ---------------------------------------------------------------------------
# Minimal HTTP facade: GET /latest.


class VoHttpServer:
    def __init__(self, vo: VirtualObject, host: str = "127.0.0.1", port: int = 0):
        self.vo = vo
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):  # noqa: N802 (http.server API)
                if self.path.rstrip("/") not in ("", "/latest"):
                    self.send_error(404)
                    return
                latest = outer.vo.serve_latest()
                if latest is None:
                    self.send_response(503)
                    self.send_header("Content-Type", "application/json")
                    self.end_headers()
                    self.wfile.write(b'{"error": "no data yet"}')
                    return
                body = json.dumps(latest.to_dict()).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self.host, self.port = self._server.server_address[:2]
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "VoHttpServer":
        self._thread = threading.Thread(
            target=self._server.serve_forever, name=f"vo-http-{self.vo.vo_id}", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self) -> "VoHttpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
