"""Scenario scripting and quasi-static ground-truth generation.

Time is integer microseconds throughout; the default 20 ms step maps to
20_000 ticks exactly, so event boundaries land on frames without float
drift.  Breaker state changes take effect at the first timestamp >= the
event time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .network import NetworkModel, load_network, network_from_dict
from .pmu import PmuConfig
from .powerflow import SweepSolver
from .schemas import validate_document

__all__ = [
    "BreakerEvent",
    "FrequencyProfile",
    "Scenario",
    "GroundTruthSeries",
    "load_scenario",
    "scenario_from_dict",
    "run_scenario",
]

US = 1_000_000


def _to_us(seconds: float) -> int:
    return int(round(seconds * US))


@dataclass(frozen=True)
class BreakerEvent:
    breaker_id: str
    open_us: int
    close_us: int


@dataclass
class FrequencyProfile:
    """Piecewise-linear f(t); ROCOF is the right-hand slope of each segment."""

    t_us: np.ndarray  # int64, strictly increasing
    hz: np.ndarray  # float64

    @classmethod
    def constant(cls, hz: float = 50.0) -> "FrequencyProfile":
        return cls(np.array([0], np.int64), np.array([float(hz)]))

    @classmethod
    def from_points(cls, points) -> "FrequencyProfile":
        t = np.array([_to_us(p[0]) for p in points], np.int64)
        hz = np.array([float(p[1]) for p in points])
        if np.any(np.diff(t) <= 0):
            raise ConfigError("frequency profile times must be strictly increasing")
        return cls(t, hz)

    def sample(self, t_us: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(frequency, rocof) at each timestamp."""
        t_us = np.asarray(t_us, np.int64)
        if len(self.t_us) == 1:
            f = np.full(t_us.shape, self.hz[0])
            return f, np.zeros_like(f)
        seg = np.searchsorted(self.t_us, t_us, side="right") - 1
        seg = np.clip(seg, 0, len(self.t_us) - 2)
        t0 = self.t_us[seg].astype(np.float64)
        t1 = self.t_us[seg + 1].astype(np.float64)
        f0 = self.hz[seg]
        f1 = self.hz[seg + 1]
        slope = (f1 - f0) / ((t1 - t0) / US)  # Hz per second
        tt = t_us.astype(np.float64)
        f = f0 + slope * (tt - t0) / US
        # clamp outside the defined range: constant extension, zero slope
        before = t_us < self.t_us[0]
        after = t_us >= self.t_us[-1]
        f[before] = self.hz[0]
        f[after] = self.hz[-1]
        rocof = slope.copy()
        rocof[before] = 0.0
        rocof[after] = 0.0
        return f, rocof


@dataclass
class Scenario:
    """Simulation script plus the measurement/estimation deployment."""

    network: NetworkModel
    duration_us: int
    step_us: int = 20_000
    events: list[BreakerEvent] = dc_field(default_factory=list)
    frequency: FrequencyProfile = dc_field(default_factory=FrequencyProfile.constant)
    noise_seed: int = 0
    start_soc: int = 0
    name: str = "scenario"
    pmus: list[PmuConfig] = dc_field(default_factory=list)
    vo_settings: dict = dc_field(default_factory=dict)
    estimator_settings: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.step_us <= 0 or US % self.step_us != 0:
            raise ConfigError(f"step {self.step_us} us must divide 1 s evenly")
        if self.duration_us <= 0:
            raise ConfigError("duration must be positive")
        known_breakers = self.network.breaker_ids()
        for ev in self.events:
            if not 0 <= ev.open_us < ev.close_us <= self.duration_us:
                raise ConfigError(
                    f"event on {ev.breaker_id!r} violates 0 <= open < close <= duration"
                )
            if ev.breaker_id not in known_breakers:
                raise ConfigError(f"event references unknown breaker {ev.breaker_id!r}")

    @property
    def n_steps(self) -> int:
        return self.duration_us // self.step_us

    def timestamps_us(self) -> np.ndarray:
        return np.arange(self.n_steps, dtype=np.int64) * self.step_us

    def open_breakers_at(self, t_us: int) -> frozenset[str]:
        out = set()
        for ev in self.events:
            if ev.open_us <= t_us < ev.close_us:
                out.add(ev.breaker_id)
        return frozenset(out)


@dataclass
class GroundTruthSeries:
    """Per-20-ms truth: bus voltage phasors, frequency, ROCOF."""

    buses: list[str]
    bus_index: dict[str, int]
    t_us: np.ndarray  # int64 [T]
    start_soc: int
    step_us: int
    v: np.ndarray  # complex128 [T, n_bus]
    freq: np.ndarray  # float64 [T]
    rocof: np.ndarray  # float64 [T]

    def soc_frac(self) -> tuple[np.ndarray, np.ndarray]:
        soc = self.start_soc + self.t_us // US
        frac = self.t_us % US
        return soc, frac

    def voltage(self, bus: str) -> np.ndarray:
        return self.v[:, self.bus_index[bus]]

    def to_csv(self, path) -> None:
        soc, frac = self.soc_frac()
        with open(path, "w") as fh:
            fh.write("soc,frac,bus,v_re,v_im,freq,rocof\n")
            for k in range(len(self.t_us)):
                f, r = float(self.freq[k]), float(self.rocof[k])
                for j, bus in enumerate(self.buses):
                    vv = self.v[k, j]
                    fh.write(
                        f"{soc[k]},{frac[k]},{bus},"
                        f"{float(vv.real)!r},{float(vv.imag)!r},{f!r},{r!r}\n"
                    )


def run_scenario(scenario: Scenario, backend: Optional[str] = None) -> GroundTruthSeries:
    """Produce the ground-truth series for a scenario.

    Pure function of the scenario: breaker states are resolved per step, the
    power flow is solved once per distinct breaker state and reused, and the
    frequency profile is sampled on the step grid.
    """
    net = scenario.network
    solver = SweepSolver(net, backend=backend)
    idx = solver.index
    t_us = scenario.timestamps_us()
    n = len(t_us)

    v = np.empty((n, idx.n_bus), np.complex128)
    cache: dict[frozenset, np.ndarray] = {}
    for k in range(n):
        state = scenario.open_breakers_at(int(t_us[k]))
        got = cache.get(state)
        if got is None:
            loads = [ld for ld in net.loads if ld.breaker_id not in state]
            gens = [g for g in net.generators if g.breaker_id not in state]
            s = solver.bus_power_vector(loads, gens)
            got, _, _ = solver.solve(s, t_us=int(t_us[k]))
            cache[state] = got
        v[k] = got

    freq, rocof = scenario.frequency.sample(t_us)
    return GroundTruthSeries(
        buses=list(idx.buses),
        bus_index=dict(idx.bus_index),
        t_us=t_us,
        start_soc=scenario.start_soc,
        step_us=scenario.step_us,
        v=v,
        freq=freq,
        rocof=rocof,
    )


# ---------------------------------------------------------------------------
# Scenario documents.


def scenario_from_dict(doc: dict, base_dir: Path, source: str = "<inline>") -> Scenario:
    validate_document(doc, "scenario", source)

    netspec = doc["network"]
    if isinstance(netspec, str):
        network = load_network((base_dir / netspec).resolve())
    else:
        network = network_from_dict(netspec, f"{source}#network")

    freq_points = doc.get("frequency_profile")
    frequency = (
        FrequencyProfile.from_points(freq_points)
        if freq_points
        else FrequencyProfile.constant(50.0)
    )

    events = [
        BreakerEvent(ev["breaker_id"], _to_us(ev["open_time"]), _to_us(ev["close_time"]))
        for ev in doc.get("events", [])
    ]

    pmus = []
    for p in doc["pmus"]:
        pmus.append(
            PmuConfig(
                idcode=int(p["idcode"]),
                station_name=p.get("station_name", f"PMU-{p['node']}"),
                node=str(p["node"]),
                snr_db=p.get("snr_db", 70.0),
                sigma_freq=p.get("sigma_freq", 0.001),
                sigma_rocof=p.get("sigma_rocof", 0.01),
            )
        )
    if len({p.idcode for p in pmus}) != len(pmus):
        raise ConfigError(f"{source}: PMU idcodes must be unique")

    return Scenario(
        network=network,
        duration_us=_to_us(doc["duration"]),
        step_us=_to_us(doc.get("step", 0.02)),
        events=events,
        frequency=frequency,
        noise_seed=int(doc["noise_seed"]),
        start_soc=int(doc.get("start_soc", 0)),
        name=doc.get("name", "scenario"),
        pmus=pmus,
        vo_settings=dict(doc.get("vo", {})),
        estimator_settings=dict(doc.get("estimator", {})),
    )


def load_scenario(file_path) -> Scenario:
    path = Path(file_path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc, path.parent, str(path))
