"""PMU emulation: noisy synchrophasor streams and the C37.118.2 TCP source."""

from __future__ import annotations

import json
import math
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import c37118
from .errors import ConfigError

__all__ = [
    "PmuConfig",
    "SynchrophasorSample",
    "emulate_stream",
    "encoded_frames",
    "write_samples_jsonl",
    "read_samples_jsonl",
    "PmuServer",
]

FRAME_US = 20_000  # 50 frames/s


@dataclass(frozen=True)
class PmuConfig:
    idcode: int
    station_name: str
    node: str
    snr_db: Optional[float] = 70.0  # None (or +inf) disables phasor noise
    sigma_freq: float = 0.001  # Hz
    sigma_rocof: float = 0.01  # Hz/s
    rate: int = 50  # frames/s, fixed at the PMU

    def __post_init__(self):
        if not 1 <= self.idcode <= 65534:
            raise ConfigError(f"idcode {self.idcode} outside 1..65534")
        if len(self.station_name) > 16:
            raise ConfigError(f"station name {self.station_name!r} exceeds 16 chars")
        if self.rate != 50:
            raise ConfigError("emulated PMUs report at a fixed 50 frames/s")
        if self.snr_db is not None and math.isfinite(self.snr_db) and self.snr_db <= 0:
            raise ConfigError("snr_db must be positive (or None/inf for no noise)")
        if self.sigma_freq < 0 or self.sigma_rocof < 0:
            raise ConfigError("noise sigmas must be non-negative")

    @property
    def noise_disabled(self) -> bool:
        return self.snr_db is None or math.isinf(self.snr_db)


@dataclass(frozen=True)
class SynchrophasorSample:
    soc: int  # seconds since epoch
    frac: int  # ticks of TIME_BASE (microseconds)
    v: complex  # voltage phasor, per-unit
    freq: float  # Hz
    rocof: float  # Hz/s

    @property
    def t_us(self) -> int:
        return self.soc * c37118.TIME_BASE + self.frac


def emulate_stream(truth, config: PmuConfig, seed) -> list[SynchrophasorSample]:
    """Sample the monitored bus of a ground-truth series, adding device noise.

    Phasor noise is complex Gaussian with per-component standard deviation
    |v_true| * 10^(-snr_db/20) / sqrt(2); frequency and ROCOF get independent
    Gaussian noise with the configured sigmas.  The whole stream is a pure
    function of (truth, config, seed).
    """
    if config.node not in truth.bus_index:
        raise ConfigError(f"PMU node {config.node!r} not present in ground truth")
    col = truth.bus_index[config.node]
    v_true = truth.v[:, col]
    n = v_true.shape[0]

    rng = np.random.default_rng(seed)
    if config.noise_disabled:
        noise_re = np.zeros(n)
        noise_im = np.zeros(n)
    else:
        scale = np.abs(v_true) * 10.0 ** (-config.snr_db / 20.0) / math.sqrt(2.0)
        noise_re = rng.standard_normal(n) * scale
        noise_im = rng.standard_normal(n) * scale
    noise_f = rng.standard_normal(n) * config.sigma_freq
    noise_r = rng.standard_normal(n) * config.sigma_rocof

    soc, frac = truth.soc_frac()
    out = []
    for k in range(n):
        out.append(
            SynchrophasorSample(
                soc=int(soc[k]),
                frac=int(frac[k]),
                v=complex(v_true[k].real + noise_re[k], v_true[k].imag + noise_im[k]),
                freq=float(truth.freq[k] + noise_f[k]),
                rocof=float(truth.rocof[k] + noise_r[k]),
            )
        )
    return out


def encoded_frames(samples: Iterable[SynchrophasorSample],
                   cfg: c37118.ConfigFrame2) -> Iterator[bytes]:
    for s in samples:
        yield c37118.encode_data(s, cfg)


# ---------------------------------------------------------------------------
# JSON-lines recording (one sample object per line).


def sample_to_dict(s: SynchrophasorSample) -> dict:
    return {
        "soc": s.soc,
        "frac": s.frac,
        "v_re": s.v.real,
        "v_im": s.v.imag,
        "freq": s.freq,
        "rocof": s.rocof,
    }


def write_samples_jsonl(samples: Iterable[SynchrophasorSample], path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_dict(s)) + "\n")


def read_samples_jsonl(path) -> list[SynchrophasorSample]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(
            SynchrophasorSample(
                soc=int(d["soc"]),
                frac=int(d["frac"]),
                v=complex(d["v_re"], d["v_im"]),
                freq=float(d["freq"]),
                rocof=float(d["rocof"]),
            )
        )
    return out


# ---------------------------------------------------------------------------
# TCP frame source.


class PmuServer:
    """Serves one emulated PMU stream over TCP using the C37.118.2 subset.

    Command handling: CMD_SEND_CFG2 answers with the config-2 frame,
    CMD_DATA_ON starts the data stream from the current cursor, CMD_DATA_OFF
    pauses it.  Unknown commands are ignored (counted).  A dropped connection
    halts the stream; a reconnect resumes from where it stopped.
    """

    def __init__(
        self,
        samples: Sequence[SynchrophasorSample],
        config: PmuConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        pacing: str = "fast",
        frame_us: int = FRAME_US,
    ):
        self.samples = list(samples)
        self.config = config
        self.pacing = pacing
        self.frame_us = frame_us
        self.cfg2 = c37118.make_config2(config.idcode, config.station_name,
                                        data_rate=config.rate)
        self.unknown_command_count = 0
        self.cursor = 0
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "PmuServer":
        self._thread = threading.Thread(target=self._accept_loop,
                                        name=f"pmu-{self.config.idcode}", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def __enter__(self) -> "PmuServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- connection handling -------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                self._serve_connection(conn)
            finally:
                try:
                    conn.close()
                except OSError:
                    pass

    def _serve_connection(self, conn: socket.socket) -> None:
        conn.settimeout(0.2)
        send_lock = threading.Lock()
        sending = threading.Event()
        done = threading.Event()

        def sender() -> None:
            next_deadline = time.monotonic()
            while not done.is_set() and not self._stop.is_set():
                if not sending.is_set():
                    time.sleep(0.001)
                    continue
                if self.cursor >= len(self.samples):
                    done.set()
                    break
                sample = self.samples[self.cursor]
                if self.pacing == "realtime":
                    now = time.monotonic()
                    if now < next_deadline:
                        time.sleep(min(next_deadline - now, 0.05))
                        continue
                    next_deadline += self.frame_us / 1e6
                frame = c37118.encode_data(sample, self.cfg2)
                try:
                    with send_lock:
                        conn.sendall(frame)
                except OSError:
                    done.set()
                    return
                self.cursor += 1
            done.set()

        tx = threading.Thread(target=sender, daemon=True)
        tx.start()
        try:
            for frame in c37118.frame_stream(_socket_chunks(conn, done, self._stop)):
                if not isinstance(frame, c37118.CommandFrame):
                    self.unknown_command_count += 1
                    continue
                if frame.cmd == c37118.CMD_SEND_CFG2:
                    with send_lock:
                        conn.sendall(c37118.encode_config2(self.cfg2))
                elif frame.cmd == c37118.CMD_DATA_ON:
                    sending.set()
                elif frame.cmd == c37118.CMD_DATA_OFF:
                    sending.clear()
                else:
                    self.unknown_command_count += 1
        except OSError:
            pass
        finally:
            done.set()
            tx.join(timeout=5.0)


def _socket_chunks(conn: socket.socket, done: threading.Event,
                   stop: threading.Event) -> Iterator[bytes]:
    while not stop.is_set():
        try:
            chunk = conn.recv(4096)
        except socket.timeout:
            if done.is_set():
                return
            continue
        except OSError:
            return
        if not chunk:
            return
        yield chunk
