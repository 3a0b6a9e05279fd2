"""Multi-rate alignment: run the estimator at the highest delivered rate.

A DSSE tick exists for every distinct timestamp at which any VO delivered a
measurement.  At a tick, streams that delivered at that exact timestamp are
used fresh (age 0); the others are held at their last delivered value with
their age recorded.  Ticks are processed in timestamp order once the
watermark (the slowest still-active stream's newest delivery) passes them,
which makes the snapshot sequence independent of transport interleaving.
"""

from __future__ import annotations

import json
import threading
from typing import Optional

import numpy as np

from .dsse import EstimationSnapshot, MeasurementModel, estimate_snapshot
from .errors import EstimationError
from .pmu import FRAME_US
from .vo import VoMeasurement

__all__ = ["StreamCoordinator", "replay_recording"]


class StreamCoordinator:
    """Aligns per-VO measurement streams and runs one snapshot per tick."""

    def __init__(
        self,
        model: MeasurementModel,
        vo_for_node: dict[str, str],
        frame_us: int = FRAME_US,
        backend: Optional[str] = None,
    ):
        missing = [n for n in model.pmu_nodes if n not in vo_for_node]
        if missing:
            raise EstimationError(f"no VO stream bound for PMU nodes {missing}")
        self.model = model
        self.vo_for_node = dict(vo_for_node)
        self.vo_ids = [vo_for_node[n] for n in model.pmu_nodes]
        self.frame_us = frame_us
        self.backend = backend
        self.snapshots: list[EstimationSnapshot] = []

        self._static_pseudo = model.pseudo_targets()
        self._zero_part = np.zeros(2 * len(model.zero_nodes))
        self._latest: dict[str, VoMeasurement] = {}
        self._latest_ts: dict[str, int] = {}
        self._seen_ts: dict[str, int] = {}  # newest submitted ts per VO
        self._ended: set[str] = set()
        self._pending: dict[int, dict[str, VoMeasurement]] = {}
        self._prev_v: Optional[np.ndarray] = None
        self._lock = threading.Lock()

    # -- stream events -------------------------------------------------------

    def submit(self, measurement: VoMeasurement) -> None:
        """Accept one VO measurement (thread-safe; any arrival interleaving)."""
        if measurement.vo_id not in self.vo_ids:
            raise EstimationError(f"measurement from unknown VO {measurement.vo_id!r}")
        with self._lock:
            t = measurement.t_us
            self._pending.setdefault(t, {})[measurement.vo_id] = measurement
            prev = self._seen_ts.get(measurement.vo_id)
            if prev is None or t > prev:
                self._seen_ts[measurement.vo_id] = t
            self._drain()

    def end_stream(self, vo_id: str) -> None:
        with self._lock:
            self._ended.add(vo_id)
            self._drain()

    def finish(self) -> list[EstimationSnapshot]:
        """Declare all streams ended and flush the remaining ticks."""
        with self._lock:
            self._ended.update(self.vo_ids)
            self._drain()
            if self._pending:
                raise EstimationError(
                    "ticks left unprocessed: some VO never delivered a measurement"
                )
        return self.snapshots

    # -- tick machinery --------------------------------------------------------

    def _watermark_allows(self, t: int) -> bool:
        for vo in self.vo_ids:
            if vo in self._ended:
                continue
            seen = self._seen_ts.get(vo)
            if seen is None or seen < t:
                return False
        return True

    def _warmed_up(self, t: int, fresh: dict[str, VoMeasurement]) -> bool:
        for vo in self.vo_ids:
            if vo in self._latest or vo in fresh:
                continue
            return False
        return True

    def _drain(self) -> None:
        while self._pending:
            t = min(self._pending)
            if not self._watermark_allows(t):
                return
            fresh = self._pending[t]
            if not self._warmed_up(t, fresh):
                # a stream has not produced its first value yet: hold the tick
                # unless that stream is already dead (then it never will).
                blockers = [
                    vo
                    for vo in self.vo_ids
                    if vo not in self._latest and vo not in fresh
                ]
                if all(b in self._ended for b in blockers):
                    raise EstimationError(
                        f"VO streams {blockers} ended without any measurement"
                    )
                return
            del self._pending[t]
            for vo_id, m in fresh.items():
                self._latest[vo_id] = m
                self._latest_ts[vo_id] = t
            self._tick(t)

    def _tick(self, t: int) -> None:
        model = self.model
        z_pmu = np.empty(2 * len(model.pmu_nodes))
        ages: dict[str, int] = {}
        for i, node in enumerate(model.pmu_nodes):
            vo_id = self.vo_for_node[node]
            m = self._latest[vo_id]
            z_pmu[2 * i] = m.v_re
            z_pmu[2 * i + 1] = m.v_im
            ages[vo_id] = (t - self._latest_ts[vo_id]) // self.frame_us

        if model.settings.pseudo_vref == "previous" and self._prev_v is not None:
            pseudo_part = model.pseudo_targets(self._prev_v)
        else:
            pseudo_part = self._static_pseudo
        z = np.concatenate([z_pmu, pseudo_part, self._zero_part])

        if model.settings.held_variance_inflation > 1.0 and any(
            a > 0 for a in ages.values()
        ):
            snapshot = self._inflated_solve(z, t, ages)
        else:
            snapshot = estimate_snapshot(
                model, z, t, ages=ages, backend=self.backend
            )
        self._prev_v = snapshot.node_v
        self.snapshots.append(snapshot)

    def _inflated_solve(self, z, t, ages) -> EstimationSnapshot:
        # Extension toggle: ages inflate held PMU-row variances, which breaks
        # the constant-gain fast path, so this solves dense per snapshot.
        model = self.model
        w = model.w.copy()
        f = model.settings.held_variance_inflation
        for i, node in enumerate(model.pmu_nodes):
            age = ages[self.vo_for_node[node]]
            if age > 0:
                w[2 * i : 2 * i + 2] /= f**age
        HtW = model.H.T * w
        x = np.linalg.solve(HtW @ model.H, HtW @ z)
        return EstimationSnapshot(
            t_us=t,
            soc=t // 1_000_000,
            frac=t % 1_000_000,
            z=z,
            x_hat=x,
            node_v=model.node_voltages(x),
            residuals=z - model.H @ x,
            ages=dict(ages),
        )


def replay_recording(
    model: MeasurementModel,
    jsonl_path,
    vo_for_node: dict[str, str],
    backend: Optional[str] = None,
) -> list[EstimationSnapshot]:
    """Offline estimation from a JSON-lines VoMeasurement recording."""
    coord = StreamCoordinator(model, vo_for_node, backend=backend)
    with open(jsonl_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            coord.submit(VoMeasurement.from_dict(json.loads(line)))
    return coord.finish()
