import numpy as np
import pytest

from adaptive_dsse.errors import PowerFlowError
from adaptive_dsse.network import build_index, network_from_dict
from adaptive_dsse.powerflow import SweepSolver, solve_power_flow

from conftest import two_bus_network
from oracles import newton_raphson_pf, power_balance_residual, random_radial_network


def consumption_map(net):
    out = {}
    for ld in net.loads:
        out[ld.node] = out.get(ld.node, 0j) + ld.s_nominal
    for g in net.generators:
        out[g.node] = out.get(g.node, 0j) - g.s_nominal
    return out


def test_zero_load_flat_profile(ieee13):
    v = solve_power_flow(ieee13, active_loads=[], active_generators=[])
    for bus, val in v.items():
        assert val == 1.0 + 0.0j  # no current, no drop: exactly flat


def test_two_bus_against_newton_raphson():
    net = two_bus_network(r=0.01, x=0.02, p=1.0, q=0.5)
    mine = solve_power_flow(net)
    oracle = newton_raphson_pf(net, consumption_map(net))
    assert abs(mine["a"] - oracle["a"]) < 1e-6
    # both solutions must satisfy the power balance on their own
    assert power_balance_residual(net, mine, consumption_map(net)) < 1e-7
    assert power_balance_residual(net, oracle, consumption_map(net)) < 1e-9


def test_ieee13_against_newton_raphson(ieee13):
    mine = solve_power_flow(ieee13)
    oracle = newton_raphson_pf(ieee13, consumption_map(ieee13))
    for bus in ieee13.buses:
        assert abs(mine[bus] - oracle[bus]) < 1e-6, bus


def test_random_networks_match_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        net = random_radial_network(rng, int(rng.integers(2, 21)),
                                    total_s=float(rng.uniform(0.2, 0.9)))
        mine = solve_power_flow(net)
        oracle = newton_raphson_pf(net, consumption_map(net))
        for bus in net.buses:
            assert abs(mine[bus] - oracle[bus]) < 1e-6


def test_monotone_drop_single_load():
    from adaptive_dsse.network import LoadSpec

    rng = np.random.default_rng(7)
    for _ in range(10):
        net = random_radial_network(rng, 6, total_s=0.0)
        net.loads = [LoadSpec("n5", 0.3 + 0.1j, None)]  # one load, deepest bus
        v = solve_power_flow(net)
        assert abs(v["n5"]) <= abs(v[net.slack]) + 1e-12


def test_non_convergence_is_reported():
    net = two_bus_network(r=0.5, x=1.0, p=2.0, q=1.0)  # infeasible loading
    with pytest.raises(PowerFlowError):
        solve_power_flow(net)


def test_warm_start_agrees_with_cold():
    net = two_bus_network()
    solver = SweepSolver(net)
    s = solver.bus_power_vector(net.loads, net.generators)
    v_cold, _, _ = solver.solve(s)
    v_warm, _, iters = solver.solve(s, v0=v_cold)
    assert np.max(np.abs(v_warm - v_cold)) < 1e-9
    assert iters <= 2


def test_backends_agree(ieee13):
    s_numba = SweepSolver(ieee13, backend="numba")
    s_numpy = SweepSolver(ieee13, backend="numpy")
    s = s_numba.bus_power_vector(ieee13.loads, ieee13.generators)
    v1, i1, _ = s_numba.solve(s)
    v2, i2, _ = s_numpy.solve(s)
    assert np.max(np.abs(v1 - v2)) < 1e-12
    assert np.max(np.abs(i1 - i2)) < 1e-12
