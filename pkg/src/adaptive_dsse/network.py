"""Radial feeder model: types, file loading, validation, and tree indexing."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, NetworkValidationError
from .schemas import validate_document

__all__ = [
    "Branch",
    "LoadSpec",
    "GenSpec",
    "NetworkModel",
    "RadialIndex",
    "load_network",
    "network_from_dict",
    "build_index",
]


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str  # parent, toward the slack
    to_bus: str
    z: complex  # per-unit series impedance


@dataclass(frozen=True)
class LoadSpec:
    node: str
    s_nominal: complex  # per-unit, consumption positive
    breaker_id: Optional[str] = None


@dataclass(frozen=True)
class GenSpec:
    node: str
    s_nominal: complex  # per-unit, injection positive
    breaker_id: Optional[str] = None


@dataclass
class NetworkModel:
    buses: list[str]
    slack: str
    branches: list[Branch]
    loads: list[LoadSpec]
    generators: list[GenSpec]
    base_voltage: float  # volts
    base_power: float  # volt-amperes

    def breaker_ids(self) -> set[str]:
        out = set()
        for item in list(self.loads) + list(self.generators):
            if item.breaker_id:
                out.add(item.breaker_id)
        return out


@dataclass
class RadialIndex:
    """Tree bookkeeping for a validated radial network.

    Branches are re-ordered topologically (every parent bus appears before
    its children); this order also fixes the state-vector layout used by the
    estimator and all exports.
    """

    buses: list[str]
    slack: int
    bus_index: dict[str, int]
    branch_ids: list[str]
    parent: np.ndarray  # bus index of each ordered branch's from-side
    child: np.ndarray  # bus index of each ordered branch's to-side
    z: np.ndarray  # complex128 per ordered branch
    parent_branch: np.ndarray  # per bus, ordered-branch index feeding it (-1 at slack)
    child_branches: list[list[int]] = field(default_factory=list)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branch_ids)

    def path_branches(self, bus: int) -> list[int]:
        """Ordered-branch indices on the slack->bus path."""
        out = []
        k = bus
        while self.parent_branch[k] >= 0:
            b = int(self.parent_branch[k])
            out.append(b)
            k = int(self.parent[b])
        out.reverse()
        return out

    def subtree_matrix(self) -> np.ndarray:
        """(n_branch, n_bus) 0/1: bus k hangs at/below branch b's child."""
        m = np.zeros((self.n_branch, self.n_bus))
        for k in range(self.n_bus):
            for b in self.path_branches(k):
                m[b, k] = 1.0
        return m

    def path_z_matrix(self) -> np.ndarray:
        """(n_bus, n_branch) complex: z_b where branch b lies on slack->k."""
        m = np.zeros((self.n_bus, self.n_branch), np.complex128)
        for k in range(self.n_bus):
            for b in self.path_branches(k):
                m[k, b] = self.z[b]
        return m


def _as_complex(p, q) -> complex:
    return complex(float(p), float(q))


def network_from_dict(doc: dict, source: str = "<inline>") -> NetworkModel:
    """Build and validate a NetworkModel from a parsed network document."""
    validate_document(doc, "network", source)

    buses = [str(b) for b in doc["buses"]]
    if len(set(buses)) != len(buses):
        raise NetworkValidationError(f"{source}: duplicate bus labels")
    slack = str(doc["slack"])
    if slack not in buses:
        raise NetworkValidationError(f"{source}: slack bus {slack!r} not in bus list")

    branches = []
    for row in doc["branches"]:
        z = _as_complex(row["r"], row["x"])
        if row["r"] < 0:
            raise NetworkValidationError(
                f"{source}: branch {row['id']!r} has negative resistance"
            )
        if abs(z) == 0:
            raise NetworkValidationError(
                f"{source}: branch {row['id']!r} has zero impedance"
            )
        branches.append(Branch(str(row["id"]), str(row["from"]), str(row["to"]), z))
    if len({b.id for b in branches}) != len(branches):
        raise NetworkValidationError(f"{source}: duplicate branch ids")

    loads = [
        LoadSpec(str(r["node"]), _as_complex(r["p"], r["q"]), r.get("breaker_id"))
        for r in doc.get("loads", [])
    ]
    gens = [
        GenSpec(str(r["node"]), _as_complex(r["p"], r["q"]), r.get("breaker_id"))
        for r in doc.get("generators", [])
    ]

    model = NetworkModel(
        buses=buses,
        slack=slack,
        branches=branches,
        loads=loads,
        generators=gens,
        base_voltage=float(doc["base_voltage_v"]),
        base_power=float(doc["base_power_va"]),
    )
    _validate_structure(model, source)
    return model


def load_network(file_path) -> NetworkModel:
    """Load and validate a network JSON file."""
    path = Path(file_path)
    if not path.is_file():
        raise ConfigError(f"network file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return network_from_dict(doc, str(path))


def _validate_structure(model: NetworkModel, source: str) -> None:
    n = len(model.buses)
    if len(model.branches) != n - 1:
        raise NetworkValidationError(
            f"{source}: radial network needs exactly {n - 1} branches for {n} buses, "
            f"got {len(model.branches)}"
        )
    known = set(model.buses)
    adjacency: dict[str, list[Branch]] = {b: [] for b in model.buses}
    for br in model.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise NetworkValidationError(
                    f"{source}: branch {br.id!r} references unknown bus {end!r}"
                )
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"{source}: branch {br.id!r} is a self-loop")
        adjacency[br.from_bus].append(br)
        adjacency[br.to_bus].append(br)

    # BFS from the slack: with n-1 edges, full reach <=> tree (no cycles).
    seen = {model.slack}
    frontier = [model.slack]
    used: set[str] = set()
    while frontier:
        bus = frontier.pop()
        for br in adjacency[bus]:
            if br.id in used:
                continue
            other = br.to_bus if br.from_bus == bus else br.from_bus
            if other in seen:
                raise NetworkValidationError(
                    f"{source}: branch {br.id!r} closes a cycle at bus {other!r}"
                )
            used.add(br.id)
            seen.add(other)
            frontier.append(other)
    if seen != known:
        missing = sorted(known - seen)
        raise NetworkValidationError(
            f"{source}: buses not connected to slack: {missing}"
        )

    for item in list(model.loads) + list(model.generators):
        if item.node not in known:
            raise NetworkValidationError(
                f"{source}: load/generator at unknown bus {item.node!r}"
            )


def build_index(model: NetworkModel) -> RadialIndex:
    """Topologically order the validated tree (normalizing branch direction)."""
    bus_index = {b: i for i, b in enumerate(model.buses)}
    by_end: dict[str, list[Branch]] = {b: [] for b in model.buses}
    for br in model.branches:
        by_end[br.from_bus].append(br)
        by_end[br.to_bus].append(br)

    order: list[tuple[str, int, int, complex]] = []  # id, parent, child, z
    seen = {model.slack}
    queue = deque([model.slack])
    while queue:
        bus = queue.popleft()
        for br in by_end[bus]:
            other = br.to_bus if br.from_bus == bus else br.from_bus
            if other in seen:
                continue
            order.append((br.id, bus_index[bus], bus_index[other], br.z))
            seen.add(other)
            queue.append(other)

    nb = len(order)
    idx = RadialIndex(
        buses=list(model.buses),
        slack=bus_index[model.slack],
        bus_index=bus_index,
        branch_ids=[o[0] for o in order],
        parent=np.array([o[1] for o in order], np.int64),
        child=np.array([o[2] for o in order], np.int64),
        z=np.array([o[3] for o in order], np.complex128),
        parent_branch=np.full(len(model.buses), -1, np.int64),
    )
    idx.child_branches = [[] for _ in model.buses]
    for b in range(nb):
        idx.parent_branch[idx.child[b]] = b
        idx.child_branches[int(idx.parent[b])].append(b)
    return idx
