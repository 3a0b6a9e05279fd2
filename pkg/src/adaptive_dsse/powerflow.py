"""Quasi-static power flow for radial feeders (backward/forward sweep)."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from . import kernels
from .errors import PowerFlowError
from .network import GenSpec, LoadSpec, NetworkModel, RadialIndex, build_index

__all__ = ["SweepSolver", "solve_power_flow", "DEFAULT_TOL", "DEFAULT_MAX_ITER"]

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100


class SweepSolver:
    """Reusable sweep solver bound to one radial network.

    Tree ordering and (for the numpy backend) the subtree/path matrices are
    precomputed once; `solve` is then cheap enough to call per 20 ms step.
    """

    def __init__(
        self,
        network: NetworkModel | RadialIndex,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        backend: Optional[str] = None,
    ):
        self.index = network if isinstance(network, RadialIndex) else build_index(network)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.backend = backend or kernels.active_backend()
        if self.backend == "numpy":
            self._subtree = self.index.subtree_matrix()
            self._pathz = self.index.path_z_matrix()
        else:
            self._subtree = None
            self._pathz = None

    def solve(
        self,
        s_bus: np.ndarray,
        v_slack: complex = 1.0 + 0.0j,
        v0: Optional[np.ndarray] = None,
        t_us: Optional[int] = None,
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Solve for bus voltages (complex p.u.) given per-bus consumption.

        Returns (v, branch_currents, iterations); raises PowerFlowError on
        non-convergence.  `v0` warm-starts the iteration.
        """
        if v0 is None:
            v0 = np.full(self.index.n_bus, complex(v_slack), np.complex128)
        else:
            v0 = v0.astype(np.complex128, copy=True)
            v0[self.index.slack] = v_slack
        v, ibr, iters, ok = kernels.sweep_power_flow(
            self.index.parent,
            self.index.child,
            self.index.z,
            np.ascontiguousarray(s_bus, np.complex128),
            complex(v_slack),
            self.tol,
            self.max_iter,
            v0,
            subtree=self._subtree,
            pathz=self._pathz,
            backend=self.backend,
        )
        if not ok:
            at = f" at t={t_us} us" if t_us is not None else ""
            raise PowerFlowError(
                f"sweep power flow did not converge in {self.max_iter} iterations{at}",
                t_us=t_us,
            )
        return v, ibr, iters

    def bus_power_vector(
        self,
        loads: Iterable[LoadSpec] = (),
        generators: Iterable[GenSpec] = (),
    ) -> np.ndarray:
        """Per-bus net consumption from active loads and generators."""
        s = np.zeros(self.index.n_bus, np.complex128)
        for ld in loads:
            s[self.index.bus_index[ld.node]] += ld.s_nominal
        for g in generators:
            s[self.index.bus_index[g.node]] -= g.s_nominal
        return s


def solve_power_flow(
    network: NetworkModel,
    active_loads: Optional[Iterable[LoadSpec]] = None,
    active_generators: Optional[Iterable[GenSpec]] = None,
    v_slack: complex = 1.0 + 0.0j,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> dict[str, complex]:
    """One-shot solve; None means "all loads/generators connected"."""
    solver = SweepSolver(network, tol=tol, max_iter=max_iter)
    loads = network.loads if active_loads is None else list(active_loads)
    gens = network.generators if active_generators is None else list(active_generators)
    s = solver.bus_power_vector(loads, gens)
    v, _, _ = solver.solve(s, v_slack=v_slack)
    return {bus: complex(v[i]) for bus, i in solver.index.bus_index.items()}
