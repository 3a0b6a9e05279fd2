"""Branch-current WLS state estimation with a constant, pre-factorized gain.

State vector layout (dimension 2 + 2*B, B = branch count):

    x = [V_slack_re, V_slack_im,
         i_re(b0), i_im(b0), i_re(b1), i_im(b1), ...]

with branches in the topological order fixed by `network.build_index`.
Measurement rows are linear in x:

* PMU voltage at node k:  V_k = V_slack - sum over path(slack->k) of z_b*i_b,
  two real rows (re: -r_b on i_re, +x_b on i_im; im: -x_b on i_re, -r_b on
  i_im, slack coefficient +1);
* current injection at node k (injection positive, i.e. generation):
  sum of child-branch currents minus the parent-branch current, two rows;
* zero injection: same rows with target 0 and a very small sigma.

The gain G = H^T W H is assembled and Cholesky-factorized once; every
snapshot reuses the factor (one extra refinement pass keeps the
normal-equation residual near machine precision despite the 1e12
zero-injection weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateVoltageError, EstimationError, ObservabilityError
from .network import NetworkModel, RadialIndex, build_index

__all__ = [
    "PseudoMeasurement",
    "EstimatorSettings",
    "MeasurementModel",
    "EstimationSnapshot",
    "power_to_current_pseudo",
    "build_model",
    "pseudos_from_network",
    "estimate_snapshot",
]


@dataclass(frozen=True)
class PseudoMeasurement:
    node: str
    s_scheduled: complex  # per-unit, consumption positive
    sigma_power: float  # per-unit, on both rectangular power components


@dataclass(frozen=True)
class EstimatorSettings:
    pmu_sigma: float = 1e-3  # p.u. per rectangular voltage component
    pseudo_power_sigma_frac: float = 0.2  # sigma_power = frac * |s|
    pseudo_sigma_floor: float = 1e-3  # keeps zero-|s| pseudos finite-weight
    zero_injection_sigma: float = 1e-6
    # Reference voltage for linearizing power pseudo-measurements:
    #   "nominal"  - scheduled-load power-flow profile, computed once at model
    #                build (constant targets, constant gain);
    #   "flat"     - 1 p.u. everywhere;
    #   "previous" - refreshed from the previous snapshot's estimate (targets
    #                then depend on the tick history).
    pseudo_vref: str = "nominal"
    held_variance_inflation: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSettings":
        return cls(**d)


def power_to_current_pseudo(
    p: PseudoMeasurement, v_ref: complex
) -> tuple[complex, float]:
    """Linearize a scheduled power into an injected-current measurement.

    Consumption maps to negative injection: i = -conj(s / v_ref).  Raises
    DegenerateVoltageError when |v_ref| < 0.5 p.u. (collapsed network state).
    """
    mag = abs(v_ref)
    if mag < 0.5:
        raise DegenerateVoltageError(
            f"reference voltage {mag:.3f} p.u. too low at node {p.node}"
        )
    i_meas = -np.conj(complex(p.s_scheduled) / complex(v_ref))
    sigma_i = p.sigma_power / mag
    return complex(i_meas), float(sigma_i)


def pseudos_from_network(
    network: NetworkModel, settings: EstimatorSettings
) -> list[PseudoMeasurement]:
    """One pseudo per node carrying load/generation (net scheduled power)."""
    net_s: dict[str, complex] = {}
    for ld in network.loads:
        net_s[ld.node] = net_s.get(ld.node, 0j) + ld.s_nominal
    for g in network.generators:
        net_s[g.node] = net_s.get(g.node, 0j) - g.s_nominal
    out = []
    for node in network.buses:
        if node == network.slack or node not in net_s:
            continue
        s = net_s[node]
        sigma = max(settings.pseudo_power_sigma_frac * abs(s), settings.pseudo_sigma_floor)
        out.append(PseudoMeasurement(node=node, s_scheduled=s, sigma_power=sigma))
    return out


@dataclass
class MeasurementRow:
    kind: str  # "pmu_voltage" | "pseudo_injection" | "zero_injection"
    node: str
    component: str  # "re" | "im"
    sigma: float


@dataclass
class MeasurementModel:
    index: RadialIndex
    rows: list[MeasurementRow]
    H: np.ndarray
    w: np.ndarray  # 1/sigma^2 per row
    HtW: np.ndarray
    G: np.ndarray
    L: np.ndarray  # lower Cholesky factor of G
    state_labels: list[str]
    pmu_nodes: list[str]
    pseudos: list[PseudoMeasurement]
    zero_nodes: list[str]
    pseudo_ref_v: np.ndarray  # per-bus linearization reference (complex)
    settings: EstimatorSettings = dc_field(default_factory=EstimatorSettings)

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def n_rows(self) -> int:
        return self.H.shape[0]

    def pmu_row(self, node: str) -> int:
        """Row index of the real-part voltage row for a PMU node."""
        return 2 * self.pmu_nodes.index(node)

    def pseudo_targets(self, v_ref: Optional[np.ndarray] = None) -> np.ndarray:
        """Injected-current targets for all pseudo rows.

        `v_ref` is a per-bus complex voltage array (e.g. the previous
        snapshot's estimate); None uses the model's stored linearization
        reference (nominal profile or flat, per settings).
        """
        if v_ref is None:
            v_ref = self.pseudo_ref_v
        out = np.empty(2 * len(self.pseudos))
        for i, p in enumerate(self.pseudos):
            ref = v_ref[self.index.bus_index[p.node]]
            i_meas, _ = power_to_current_pseudo(p, complex(ref))
            out[2 * i] = i_meas.real
            out[2 * i + 1] = i_meas.imag
        return out

    def solve(self, z: np.ndarray, backend: Optional[str] = None) -> np.ndarray:
        rhs = self.HtW @ z
        x = kernels.solve_spd(self.L, rhs, backend=backend)
        # one refinement pass (gain factor reused) for the extreme-weight rows
        correction = rhs - self.G @ x
        return x + kernels.solve_spd(self.L, correction, backend=backend)

    def node_voltages(self, x: np.ndarray) -> np.ndarray:
        """Slack-rooted traversal accumulating z_b * i_b drops."""
        idx = self.index
        v = np.empty(idx.n_bus, np.complex128)
        v[idx.slack] = complex(x[0], x[1])
        for b in range(idx.n_branch):
            i_b = complex(x[2 + 2 * b], x[3 + 2 * b])
            v[idx.child[b]] = v[idx.parent[b]] - idx.z[b] * i_b
        return v


@dataclass
class EstimationSnapshot:
    t_us: int
    soc: int
    frac: int
    z: np.ndarray
    x_hat: np.ndarray
    node_v: np.ndarray  # complex, per bus in model.index order
    residuals: np.ndarray
    ages: dict[str, int]  # per-VO sample age in frames


def build_model(
    network: NetworkModel | RadialIndex,
    pmu_nodes: list[str],
    pseudos: list[PseudoMeasurement],
    settings: EstimatorSettings = EstimatorSettings(),
) -> MeasurementModel:
    """Assemble H, W and the factorized gain for one topology.

    Zero-injection rows are added for every non-slack bus that carries no
    pseudo; raises ObservabilityError when H is rank deficient.
    """
    idx = network if isinstance(network, RadialIndex) else build_index(network)
    nb = idx.n_branch
    dim = 2 + 2 * nb

    state_labels = ["v_slack_re", "v_slack_im"]
    for bid in idx.branch_ids:
        state_labels += [f"i_re[{bid}]", f"i_im[{bid}]"]

    pseudo_nodes = {p.node for p in pseudos}
    for node in pseudo_nodes:
        if node not in idx.bus_index:
            raise EstimationError(f"pseudo-measurement at unknown node {node!r}")
        if idx.bus_index[node] == idx.slack:
            raise EstimationError("slack bus cannot carry a pseudo-measurement")
    for node in pmu_nodes:
        if node not in idx.bus_index:
            raise EstimationError(f"PMU at unknown node {node!r}")
    zero_nodes = [
        b
        for b in idx.buses
        if idx.bus_index[b] != idx.slack and b not in pseudo_nodes
    ]

    rows: list[MeasurementRow] = []
    blocks: list[np.ndarray] = []

    def injection_rows(node: str) -> np.ndarray:
        k = idx.bus_index[node]
        h = np.zeros((2, dim))
        pb = int(idx.parent_branch[k])
        h[0, 2 + 2 * pb] = -1.0
        h[1, 3 + 2 * pb] = -1.0
        for cb in idx.child_branches[k]:
            h[0, 2 + 2 * cb] = 1.0
            h[1, 3 + 2 * cb] = 1.0
        return h

    for node in pmu_nodes:
        k = idx.bus_index[node]
        h = np.zeros((2, dim))
        h[0, 0] = 1.0
        h[1, 1] = 1.0
        for b in idx.path_branches(k):
            r, x = idx.z[b].real, idx.z[b].imag
            h[0, 2 + 2 * b] = -r
            h[0, 3 + 2 * b] = x
            h[1, 2 + 2 * b] = -x
            h[1, 3 + 2 * b] = -r
        blocks.append(h)
        rows.append(MeasurementRow("pmu_voltage", node, "re", settings.pmu_sigma))
        rows.append(MeasurementRow("pmu_voltage", node, "im", settings.pmu_sigma))

    for p in pseudos:
        _, sigma_i = power_to_current_pseudo(p, 1.0 + 0.0j)
        blocks.append(injection_rows(p.node))
        rows.append(MeasurementRow("pseudo_injection", p.node, "re", sigma_i))
        rows.append(MeasurementRow("pseudo_injection", p.node, "im", sigma_i))

    for node in zero_nodes:
        blocks.append(injection_rows(node))
        rows.append(MeasurementRow("zero_injection", node, "re", settings.zero_injection_sigma))
        rows.append(MeasurementRow("zero_injection", node, "im", settings.zero_injection_sigma))

    if not blocks:
        raise ObservabilityError("empty measurement set", unconstrained=state_labels)
    H = np.vstack(blocks)

    # Observability: column rank of H (weights cannot repair a deficiency).
    _u, s, vt = np.linalg.svd(H, full_matrices=True)
    tol = max(H.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank < dim:
        bad = []
        for v_dir in vt[rank:]:
            top = np.argsort(-np.abs(v_dir))[:3]
            bad.append(" + ".join(f"{v_dir[i]:+.2f}*{state_labels[i]}" for i in top))
        raise ObservabilityError(
            f"measurement model rank {rank} < {dim}; unconstrained directions: {bad}",
            unconstrained=bad,
        )

    sigma = np.array([r.sigma for r in rows])
    w = 1.0 / sigma**2
    HtW = H.T * w
    G = HtW @ H
    L = np.linalg.cholesky(G)

    if settings.pseudo_vref == "flat":
        ref_v = np.ones(idx.n_bus, np.complex128)
    else:
        # nominal operating profile implied by the schedule itself: a sweep
        # solve with the pseudo powers as consumption (constant per topology)
        from .powerflow import SweepSolver

        s_bus = np.zeros(idx.n_bus, np.complex128)
        for p in pseudos:
            s_bus[idx.bus_index[p.node]] += p.s_scheduled
        ref_v, _, _ = SweepSolver(idx).solve(s_bus)

    return MeasurementModel(
        index=idx,
        rows=rows,
        H=H,
        w=w,
        HtW=HtW,
        G=G,
        L=L,
        state_labels=state_labels,
        pmu_nodes=list(pmu_nodes),
        pseudos=list(pseudos),
        zero_nodes=zero_nodes,
        pseudo_ref_v=ref_v,
        settings=settings,
    )


def estimate_snapshot(
    model: MeasurementModel,
    z: np.ndarray,
    t_us: int,
    ages: Optional[dict[str, int]] = None,
    backend: Optional[str] = None,
) -> EstimationSnapshot:
    """One WLS execution against the stored factorization.

    `t_us` is the absolute measurement timestamp (SOC seconds * 1e6 + frac).
    """
    z = np.asarray(z, np.float64)
    if z.shape != (model.n_rows,):
        raise EstimationError(f"z has shape {z.shape}, expected ({model.n_rows},)")
    if not np.all(np.isfinite(z)):
        raise EstimationError("non-finite measurement entries rejected")
    x = model.solve(z, backend=backend)
    residuals = z - model.H @ x
    return EstimationSnapshot(
        t_us=t_us,
        soc=t_us // 1_000_000,
        frac=t_us % 1_000_000,
        z=z,
        x_hat=x,
        node_v=model.node_voltages(x),
        residuals=residuals,
        ages=dict(ages or {}),
    )
