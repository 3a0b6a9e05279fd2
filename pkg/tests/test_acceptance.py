"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Golden values (forwarded-frame counts) were pinned from the first
deterministic run of the shipped scenario and are regression-checked here.
"""

import math
import time

import numpy as np
import pytest

from adaptive_dsse import c37118
from adaptive_dsse.dsse import build_model, estimate_snapshot, pseudos_from_network
from adaptive_dsse.dsse import EstimatorSettings
from adaptive_dsse.errors import CodecError
from adaptive_dsse.pipeline import build_scenario_model, run_estimation
from adaptive_dsse.pmu import SynchrophasorSample
from adaptive_dsse.powerflow import SweepSolver, solve_power_flow

from oracles import (
    crc_ccitt_bitwise,
    dense_wls_matrices,
    dense_wls_solve,
    newton_raphson_pf,
    random_radial_network,
)

US = 1_000_000
EVENT_FRAMES = {410: "brk150:open", 675: "brk75:open", 775: "brk75:close", 880: "brk150:close"}
HOLD = 50

# pinned after the first deterministic run of data/paper_scenario.json
GOLDEN_FORWARDED = {"vo-31": 353, "vo-71": 365}
GOLDEN_FULL_RATE = {"vo-31": 1500, "vo-71": 1500}
GOLDEN_SNAPSHOTS_ADAPTIVE = 388


def note(msg):
    print(f"\n{msg}", flush=True)


def rel_time_us(scenario, t_abs_us):
    return t_abs_us - scenario.start_soc * US


def test_criterion_1_rate_trigger_reproduction(paper_scenario, paper_run):
    ad = paper_run.results["adaptive"]
    for vo_id, trace in ad.traces.items():
        mags = [r["v_mag"] for r in trace]
        exceed = {
            k
            for k in range(1, len(mags))
            if abs(mags[k] - mags[k - 1]) / mags[k - 1] > 0.02
        }
        assert exceed == set(EVENT_FRAMES), f"{vo_id}: 2% frames {sorted(exceed)}"
        for frame in EVENT_FRAMES:
            row = trace[frame]
            assert row["forwarded"], f"{vo_id} frame {frame} not forwarded"
            assert row["rr"] == 50, f"{vo_id} frame {frame} rr={row['rr']}"
            assert row["trigger"] != "none"
        # detection latency: the forwarded measurement exists at the very frame
        fwd_ts = {rel_time_us(paper_scenario, m.t_us) // 20_000
                  for m in ad.measurements[vo_id] if m.rr == 50}
        for frame in EVENT_FRAMES:
            assert frame in fwd_ts

    t0 = time.perf_counter()
    run_estimation(paper_scenario, mode="both", transport="inprocess")
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"fast-mode runtime {elapsed:.1f}s"
    note(f"ACCEPTANCE 1 PASS: all 4 events trigger RR=50 on their exact frame "
         f"(latency 0) on both VOs; fast both-modes run took {elapsed:.2f}s < 10s")


def test_criterion_2_progressive_decay(paper_run):
    last_event = 880
    for vo_id, trace in paper_run.results["adaptive"].traces.items():
        rr = [r["rr"] for r in trace]
        assert rr[last_event] == 50  # trigger frame
        transitions = [
            (k, rr[k - 1], rr[k])
            for k in range(last_event + 1, len(rr))
            if rr[k] != rr[k - 1]
        ]
        assert transitions == [
            (last_event + HOLD, 50, 25),
            (last_event + 2 * HOLD, 25, 10),
            (last_event + 3 * HOLD, 10, 1),
        ], f"{vo_id}: {transitions}"
        assert all(v == 1 for v in rr[last_event + 3 * HOLD:])
    note(f"ACCEPTANCE 2 PASS: post-event decay 50->25->10->1 with plateaus of "
         f"exactly {HOLD} input frames on both VOs (deterministic seed)")


def test_criterion_3_unmonitored_node_tracking(paper_scenario, paper_run):
    truth = paper_run.truth
    ad = paper_run.results["adaptive"]
    i150 = truth.bus_index["150"]
    step_us = paper_scenario.step_us

    before = [s for s in ad.snapshots if rel_time_us(paper_scenario, s.t_us) < 8_200_000]
    at_or_after = [s for s in ad.snapshots if rel_time_us(paper_scenario, s.t_us) >= 8_200_000]
    first = at_or_after[0]
    assert rel_time_us(paper_scenario, first.t_us) == 8_200_000  # within one DSSE tick
    k_evt = 8_200_000 // step_us
    truth_step = abs(truth.v[k_evt, i150]) - abs(truth.v[k_evt - 1, i150])
    est_step = abs(first.node_v[i150]) - abs(before[-1].node_v[i150])
    assert truth_step > 0.02
    assert est_step > 0.8 * truth_step

    errs = []
    for s in at_or_after:
        t = rel_time_us(paper_scenario, s.t_us)
        if t >= 13_500_000:
            break
        k = t // step_us
        errs.append(abs(abs(s.node_v[i150]) - abs(truth.v[k, i150])))
    worst = max(errs)
    assert worst < 5e-3, f"post-event |V150| error {worst:.2e}"
    note(f"ACCEPTANCE 3 PASS: node-150 step visible at the 8.2s tick "
         f"(est {est_step:.4f} vs truth {truth_step:.4f} p.u.); post-event error "
         f"max {worst:.1e} < 5e-3 p.u. over {len(errs)} ticks")


def test_criterion_4_adaptive_equals_full_rate_on_shared_ticks(paper_run):
    ad = paper_run.results["adaptive"]
    fr = paper_run.results["full_rate"]
    shared = set.intersection(*({m.t_us for m in ms} for ms in ad.measurements.values()))
    assert len(shared) > 100
    fr_by_ts = {s.t_us: s for s in fr.snapshots}
    ad_by_ts = {s.t_us: s for s in ad.snapshots}
    for t in shared:
        a, f = ad_by_ts[t], fr_by_ts[t]
        assert np.array_equal(a.z, f.z)
        assert np.array_equal(a.x_hat, f.x_hat)
        assert np.array_equal(a.node_v, f.node_v)
        assert a.ages == f.ages
    note(f"ACCEPTANCE 4 PASS: {len(shared)} shared timestamps bit-identical "
         f"between adaptive and full-rate (same seed)")


def test_criterion_5_wls_correctness(paper_scenario, paper_run):
    settings = EstimatorSettings()

    # (a) noiseless consistent measurements -> exact recovery
    rng = np.random.default_rng(123)
    worst_rec = 0.0
    for _ in range(20):
        net = random_radial_network(rng, int(rng.integers(3, 9)), total_s=0.5)
        model = build_model(net, [net.buses[-1]], pseudos_from_network(net, settings), settings)
        solver = SweepSolver(net)
        v, ibr, _ = solver.solve(solver.bus_power_vector(net.loads, net.generators))
        x_true = np.zeros(model.state_dim)
        x_true[0], x_true[1] = v[solver.index.slack].real, v[solver.index.slack].imag
        for b in range(solver.index.n_branch):
            x_true[2 + 2 * b], x_true[3 + 2 * b] = ibr[b].real, ibr[b].imag
        snap = estimate_snapshot(model, model.H @ x_true, t_us=0)
        worst_rec = max(
            worst_rec, np.linalg.norm(snap.x_hat - x_true) / np.linalg.norm(x_true)
        )
    assert worst_rec < 1e-10

    # (b) >= 100 random small models vs dense normal-equations oracle
    worst_oracle = 0.0
    for _ in range(120):
        n = int(rng.integers(2, 7))
        net = random_radial_network(rng, n, total_s=0.4)
        pmu_nodes = [net.buses[int(rng.integers(1, n))]]
        pseudos = pseudos_from_network(net, settings)
        model = build_model(net, pmu_nodes, pseudos, settings)
        H_o, w_o = dense_wls_matrices(net, pmu_nodes, pseudos, settings.pmu_sigma)
        z = rng.normal(loc=0.5, scale=0.5, size=model.n_rows)
        mine = model.solve(z)
        oracle = dense_wls_solve(H_o, w_o, z)
        worst_oracle = max(
            worst_oracle, np.linalg.norm(mine - oracle) / np.linalg.norm(oracle)
        )
    assert worst_oracle < 1e-9

    # (c) residual orthogonality on every snapshot of the paper scenario
    model = build_scenario_model(paper_scenario)
    worst_orth = 0.0
    n_checked = 0
    for res in paper_run.results.values():
        for s in res.snapshots:
            lhs = np.max(np.abs(model.HtW @ s.residuals))
            rhs = np.max(np.abs(model.HtW @ s.z))
            worst_orth = max(worst_orth, lhs / rhs)
            n_checked += 1
    assert worst_orth < 1e-9
    note(f"ACCEPTANCE 5 PASS: (a) noiseless recovery {worst_rec:.1e} < 1e-10; "
         f"(b) 120 random models vs dense oracle {worst_oracle:.1e} < 1e-9; "
         f"(c) orthogonality {worst_orth:.1e} < 1e-9 over {n_checked} snapshots")


def test_criterion_6_power_flow_oracle(ieee13):
    def consumption(net):
        out = {}
        for ld in net.loads:
            out[ld.node] = out.get(ld.node, 0j) + ld.s_nominal
        for g in net.generators:
            out[g.node] = out.get(g.node, 0j) - g.s_nominal
        return out

    mine = solve_power_flow(ieee13)
    oracle = newton_raphson_pf(ieee13, consumption(ieee13))
    worst = max(abs(mine[b] - oracle[b]) for b in ieee13.buses)
    rng = np.random.default_rng(555)
    for _ in range(50):
        net = random_radial_network(rng, int(rng.integers(2, 21)),
                                    total_s=float(rng.uniform(0.2, 0.9)))
        v1 = solve_power_flow(net)
        v2 = newton_raphson_pf(net, consumption(net))
        worst = max(worst, max(abs(v1[b] - v2[b]) for b in net.buses))
    assert worst < 1e-6
    note(f"ACCEPTANCE 6 PASS: sweep vs Newton-Raphson within {worst:.1e} < 1e-6 p.u. "
         f"on the 13-bus example and 50 random radial feeders")


def test_criterion_7_codec():
    t0 = time.perf_counter()
    cfg = c37118.make_config2(3, "ACCEPT", data_rate=50)
    rng = np.random.default_rng(2718)

    for _ in range(10_000):
        s = SynchrophasorSample(
            soc=int(rng.integers(0, 2**32)),
            frac=int(rng.integers(0, c37118.TIME_BASE)),
            v=complex(np.float32(rng.normal()), np.float32(rng.normal())),
            freq=50.0 + float(np.float32(rng.normal() * 0.1)),
            rocof=float(np.float32(rng.normal())),
        )
        f = c37118.decode_frame(c37118.encode_data(s, cfg))
        assert (f.header.soc, f.header.fracsec, f.phasor, f.rocof) == (
            s.soc, s.frac, s.v, s.rocof
        )
    rates = (1, 10, 25, 50)
    for _ in range(10_000):
        cfg2 = c37118.make_config2(
            idcode=int(rng.integers(1, 65535)),
            station_name=f"S{rng.integers(0, 10**6)}",
            data_rate=rates[int(rng.integers(0, 4))],
            soc=int(rng.integers(0, 2**32)),
            fracsec=int(rng.integers(0, 2**24)),
        )
        back = c37118.decode_frame(c37118.encode_config2(cfg2))
        assert (back.pmu_idcode, back.data_rate) == (cfg2.pmu_idcode, cfg2.data_rate)
    for _ in range(10_000):
        idcode = int(rng.integers(0, 2**16))
        cmd = int(rng.integers(0, 2**16))
        back = c37118.decode_frame(c37118.encode_command(idcode, cmd))
        assert (back.header.idcode, back.cmd) == (idcode, cmd)

    assert crc_ccitt_bitwise(b"123456789") == c37118.crc_ccitt(b"123456789") == 0x29B1
    for _ in range(1000):
        payload = rng.bytes(int(rng.integers(0, 64)))
        assert c37118.crc_ccitt(payload) == crc_ccitt_bitwise(payload)

    blob = rng.bytes(2_000_000)
    outcomes = 0
    for k in range(1_000_000):
        size = 1 + (k % 64)
        start = (k * 61) % (len(blob) - 64)
        try:
            c37118.decode_frame(blob[start : start + size])
        except CodecError:
            pass
        outcomes += 1
    elapsed = time.perf_counter() - t0
    assert outcomes == 1_000_000
    assert elapsed < 60.0, f"codec criterion took {elapsed:.1f}s"
    note(f"ACCEPTANCE 7 PASS: 3x10^4 round trips, CRC matches bit-serial oracle, "
         f"10^6 fuzz inputs with zero crashes, in {elapsed:.1f}s < 60s")


def test_criterion_8_bandwidth_efficiency(paper_run):
    ad = paper_run.results["adaptive"]
    fr = paper_run.results["full_rate"]
    fwd = sum(ad.forwarded_counts.values())
    full = sum(fr.forwarded_counts.values())
    ratio = fwd / full
    assert ratio <= 0.25, f"forwarded ratio {ratio:.4f}"
    # golden regression (pinned after the first deterministic run)
    assert ad.forwarded_counts == GOLDEN_FORWARDED
    assert fr.forwarded_counts == GOLDEN_FULL_RATE
    assert len(ad.snapshots) == GOLDEN_SNAPSHOTS_ADAPTIVE
    note(f"ACCEPTANCE 8 PASS: adaptive forwards {fwd}/{full} frames "
         f"({100 * ratio:.1f}% <= 25%); golden counts unchanged")


def test_criterion_9_gamma_trigger(gamma_scenario):
    result = run_estimation(gamma_scenario, mode="adaptive", transport="inprocess")
    for vo_id, trace in result.results["adaptive"].traces.items():
        triggered = [(k, r) for k, r in enumerate(trace) if r["trigger"] != "none"]
        assert triggered, f"{vo_id}: no trigger"
        frame, row = triggered[0]
        assert row["trigger"] == "gamma"
        assert frame == 250  # 5.0 s, first ramp frame at -10 Hz/s
        assert row["rr"] == 50
        assert row["gamma"] > 5.0
        assert row["alpha"] < 0.02 and row["beta"] < 0.02  # ROCOF metric alone
    note("ACCEPTANCE 9 PASS: -10 Hz/s ramp with flat voltage raises RR to 50 "
         "via the gamma metric alone on both VOs")
