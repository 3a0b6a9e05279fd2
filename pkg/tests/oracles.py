"""Independent reference implementations used only by the tests.

These deliberately avoid the package's computational paths: the power-flow
oracle is a polar Newton-Raphson on the bus admittance matrix, the CRC
oracle is bit-serial, and the WLS oracle assembles dense normal equations
from first principles.
"""

from __future__ import annotations

import numpy as np

from adaptive_dsse.network import NetworkModel, build_index


# ---------------------------------------------------------------------------
# Newton-Raphson polar power flow (MATPOWER-style Jacobian).


def newton_raphson_pf(network: NetworkModel, s_consumption: dict[str, complex],
                      tol: float = 1e-12, max_iter: int = 60) -> dict[str, complex]:
    buses = list(network.buses)
    n = len(buses)
    pos = {b: i for i, b in enumerate(buses)}
    slack = pos[network.slack]

    Y = np.zeros((n, n), np.complex128)
    for br in network.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        y = 1.0 / br.z
        Y[f, f] += y
        Y[t, t] += y
        Y[f, t] -= y
        Y[t, f] -= y

    s_inj = np.zeros(n, np.complex128)
    for node, s in s_consumption.items():
        s_inj[pos[node]] -= s  # injection = -consumption

    pq = np.array([i for i in range(n) if i != slack])
    vm = np.ones(n)
    va = np.zeros(n)

    for _ in range(max_iter):
        V = vm * np.exp(1j * va)
        Ibus = Y @ V
        S = V * np.conj(Ibus)
        mis = np.concatenate([(S - s_inj).real[pq], (S - s_inj).imag[pq]])
        if np.max(np.abs(mis)) < tol:
            return {b: complex(V[pos[b]]) for b in buses}
        dV = np.diag(V)
        dI = np.diag(Ibus)
        dVnorm = np.diag(V / np.abs(V))
        dS_dVa = 1j * dV @ np.conj(dI - Y @ dV)
        dS_dVm = dVnorm @ np.conj(dI) + dV @ np.conj(Y @ dVnorm)
        J = np.block(
            [
                [dS_dVa.real[np.ix_(pq, pq)], dS_dVm.real[np.ix_(pq, pq)]],
                [dS_dVa.imag[np.ix_(pq, pq)], dS_dVm.imag[np.ix_(pq, pq)]],
            ]
        )
        dx = np.linalg.solve(J, -mis)
        va[pq] += dx[: len(pq)]
        vm[pq] += dx[len(pq):]
    raise RuntimeError("Newton-Raphson oracle did not converge")


def power_balance_residual(network: NetworkModel, voltages: dict[str, complex],
                           s_consumption: dict[str, complex]) -> float:
    """Max |S_calc - S_spec| at non-slack buses (validates any solution)."""
    buses = list(network.buses)
    pos = {b: i for i, b in enumerate(buses)}
    n = len(buses)
    Y = np.zeros((n, n), np.complex128)
    for br in network.branches:
        f, t = pos[br.from_bus], pos[br.to_bus]
        y = 1.0 / br.z
        Y[f, f] += y
        Y[t, t] += y
        Y[f, t] -= y
        Y[t, f] -= y
    V = np.array([voltages[b] for b in buses])
    S = V * np.conj(Y @ V)
    worst = 0.0
    for b in buses:
        if b == network.slack:
            continue
        want = -s_consumption.get(b, 0j)
        worst = max(worst, abs(S[pos[b]] - want))
    return worst


# ---------------------------------------------------------------------------
# Bit-serial CRC-CCITT.


def crc_ccitt_bitwise(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


# ---------------------------------------------------------------------------
# Dense WLS normal-equations oracle.
#
# Shares only the documented layout contracts (state order = topological
# branch order, rows = pmu pairs then pseudo pairs then zero pairs); all
# coefficients are recomputed here from scratch.


def dense_wls_matrices(network: NetworkModel, pmu_nodes, pseudos, pmu_sigma,
                       zero_sigma=1e-6):
    idx = build_index(network)
    nb = idx.n_branch
    dim = 2 + 2 * nb

    parent_branch = {}
    parent_bus = {}
    for b in range(nb):
        parent_branch[int(idx.child[b])] = b
        parent_bus[int(idx.child[b])] = int(idx.parent[b])

    def path(k):
        out = []
        while k != idx.slack:
            b = parent_branch[k]
            out.append(b)
            k = parent_bus[k]
        return out

    rows = []
    sigmas = []
    for node in pmu_nodes:
        k = idx.bus_index[node]
        h_re = np.zeros(dim)
        h_im = np.zeros(dim)
        h_re[0] = 1.0
        h_im[1] = 1.0
        for b in path(k):
            r, x = idx.z[b].real, idx.z[b].imag
            h_re[2 + 2 * b] -= r
            h_re[3 + 2 * b] += x
            h_im[2 + 2 * b] -= x
            h_im[3 + 2 * b] -= r
        rows += [h_re, h_im]
        sigmas += [pmu_sigma, pmu_sigma]

    def injection(node):
        k = idx.bus_index[node]
        h_re = np.zeros(dim)
        h_im = np.zeros(dim)
        pb = parent_branch[k]
        h_re[2 + 2 * pb] = -1.0
        h_im[3 + 2 * pb] = -1.0
        for b in range(nb):
            if int(idx.parent[b]) == k:
                h_re[2 + 2 * b] = 1.0
                h_im[3 + 2 * b] = 1.0
        return h_re, h_im

    for p in pseudos:
        h_re, h_im = injection(p.node)
        rows += [h_re, h_im]
        sigmas += [p.sigma_power, p.sigma_power]

    pseudo_nodes = {p.node for p in pseudos}
    for node in idx.buses:
        k = idx.bus_index[node]
        if k == idx.slack or node in pseudo_nodes:
            continue
        h_re, h_im = injection(node)
        rows += [h_re, h_im]
        sigmas += [zero_sigma, zero_sigma]

    H = np.array(rows)
    w = 1.0 / np.array(sigmas) ** 2
    return H, w


def dense_wls_solve(H: np.ndarray, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    G = (H.T * w) @ H
    return np.linalg.solve(G, (H.T * w) @ z)


# ---------------------------------------------------------------------------
# Random radial network generator.


def random_radial_network(rng: np.random.Generator, n_bus: int,
                          total_s: float = 0.6) -> NetworkModel:
    from adaptive_dsse.network import network_from_dict

    buses = [f"n{i}" for i in range(n_bus)]
    branches = []
    for i in range(1, n_bus):
        parent = int(rng.integers(0, i))
        r = float(rng.uniform(0.003, 0.03))
        x = float(rng.uniform(0.006, 0.06))
        branches.append(
            {"id": f"b{i}", "from": buses[parent], "to": buses[i], "r": r, "x": x}
        )
    raw_p = rng.uniform(0.2, 1.0, n_bus - 1)
    pf_ratio = rng.uniform(0.1, 0.6, n_bus - 1)  # q coupled to p: sane power factor
    scale = total_s / raw_p.sum() if n_bus > 1 else 0.0
    loads = [
        {
            "node": buses[i + 1],
            "p": float(raw_p[i] * scale),
            "q": float(raw_p[i] * pf_ratio[i] * scale),
        }
        for i in range(n_bus - 1)
    ]
    doc = {
        "schema_version": 1,
        "base_voltage_v": 4160.0,
        "base_power_va": 5e6,
        "slack": buses[0],
        "buses": buses,
        "branches": branches,
        "loads": loads,
        "generators": [],
    }
    return network_from_dict(doc, "<random>")
