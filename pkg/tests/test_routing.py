import itertools
import math

import numpy as np
import pytest

from uavnet import routing
from uavnet.routing import (GCS_ID, LatencyStats, Packet, ParPredictor,
                            RoutingConfig, RoutingSim, TopologyError,
                            TrafficModel, build_topology, generate_arrivals,
                            min_hops_to_gcs, predict_backlog, select_next_hop,
                            simulate)


def test_zero_rate_zero_arrivals():
    model = TrafficModel(mean_pps=0.0)
    rng = np.random.default_rng(0)
    assert all(generate_arrivals(model, 0, t, rng) == 0 for t in range(100))


def test_arrival_mean_matches_configured_rate():
    model = TrafficModel(mean_pps=0.3, rel_amplitude=0.9, period_slots=240, num_uavs=4)
    rng = np.random.default_rng(1)
    total = sum(generate_arrivals(model, 2, t, rng) for t in range(100_000))
    assert total / 100_000 == pytest.approx(0.3, rel=0.02)


def test_arrivals_deterministic_per_seed():
    model = TrafficModel(mean_pps=0.4, num_uavs=3)

    def seq(seed):
        rng = np.random.default_rng(seed)
        return [generate_arrivals(model, 1, t, rng) for t in range(500)]

    assert seq(7) == seq(7)
    assert seq(7) != seq(8)


def test_min_hops_adjacent_and_chain():
    # single relay next to the GCS
    h = min_hops_to_gcs(np.array([[8.0, 0.0]]), np.zeros(2), 10.0)
    assert h.tolist() == [1.0]
    # chain of four: farthest first
    chain = np.array([[32.0, 0.0], [24.0, 0.0], [16.0, 0.0], [8.0, 0.0]])
    h = min_hops_to_gcs(chain, np.zeros(2), 10.0)
    assert h.tolist() == [4.0, 3.0, 2.0, 1.0]


def brute_force_hops(positions, gcs, radius):
    """All-simple-paths enumeration oracle for small graphs."""
    n = len(positions)
    pts = [gcs] + list(positions)
    edges = {(i, k) for i in range(n + 1) for k in range(n + 1)
             if i != k and np.linalg.norm(pts[i] - pts[k]) <= radius}

    best = [math.inf] * (n + 1)

    def walk(node, seen, depth):
        if depth >= best[node]:
            return
        best[node] = depth
        for (a, b) in edges:
            if a == node and b not in seen:
                walk(b, seen | {b}, depth + 1)

    walk(0, {0}, 0)
    return np.array(best[1:])


def test_min_hops_matches_enumeration_oracle():
    rng = np.random.default_rng(3)
    for trial in range(30):
        positions = rng.uniform(0, 30, (8, 2))
        got = min_hops_to_gcs(positions, np.zeros(2), 12.0)
        want = brute_force_hops(positions, np.zeros(2), 12.0)
        assert np.array_equal(got, want), f"trial {trial}"


def test_topology_is_connected_across_seeds():
    cfg = RoutingConfig()
    for seed in range(30):
        for j in (2, 5, 12, 20):
            sim = RoutingSim(cfg, "shortest_path", j, seed)
            assert np.all(np.isfinite(sim.hops))
            assert sim.hops.min() == 1.0


def test_disconnected_topology_rejected():
    cfg = RoutingConfig()
    positions = np.array([[8.0, 0.0], [500.0, 500.0]])
    with pytest.raises(TopologyError):
        RoutingSim(cfg, "shortest_path", 2, 0, positions=positions)


def test_select_single_candidate():
    chosen, scores = select_next_hop([4], [3.0], [0.1], [2.0], (1 / 3, 1 / 3, 1 / 3))
    assert chosen == 4
    assert scores[0].score == 0.0


def test_select_empty_queue_dominates():
    chosen, _ = select_next_hop([1, 2], [10.0, 0.0], [0.05, 0.05], [1.0, 1.0],
                                (0.5, 0.25, 0.25))
    assert chosen == 2


def test_select_matches_inline_enumeration():
    candidates = [2, 5, 7, 9]
    backlogs = [3.0, 0.0, 5.0, 1.0]
    delays = [0.05, 0.07, 0.04, 0.06]
    hops = [2.0, 2.0, 1.0, 2.0]
    w = (1 / 3, 1 / 3, 1 / 3)

    def norm(vals):
        lo, hi = min(vals), max(vals)
        return [(v - lo) / (hi - lo) if hi > lo else 0.0 for v in vals]

    ln, dn, hn = norm(backlogs), norm(delays), norm(hops)
    want = min(range(4), key=lambda i: (w[0] * ln[i] + w[1] * dn[i] + w[2] * hn[i],
                                        candidates[i]))
    chosen, scores = select_next_hop(candidates, backlogs, delays, hops, w, validate=True)
    assert chosen == candidates[want]
    for s in scores:
        assert 0.0 <= s.backlog_norm <= 1.0
        assert 0.0 <= s.delay_norm <= 1.0
        assert 0.0 <= s.hops_norm <= 1.0


def test_select_tie_breaks_lowest_id():
    chosen, _ = select_next_hop([9, 3], [1.0, 1.0], [0.05, 0.05], [1.0, 1.0],
                                (1 / 3, 1 / 3, 1 / 3))
    assert chosen == 3


def test_select_rejects_empty():
    with pytest.raises(ValueError):
        select_next_hop([], [], [], [], (1 / 3, 1 / 3, 1 / 3))


def test_predictor_short_history_falls_back_to_last_value():
    cfg = RoutingConfig()
    pred = ParPredictor(cfg, seed=0)
    assert pred.predict([]) == 0.0
    assert pred.predict([3.0]) == 3.0
    assert pred.predict([1.0, 2.0, 4.0]) == 4.0


def test_predictor_learns_constant_series():
    cfg = RoutingConfig(predictor_window=8)
    pred = ParPredictor(cfg, seed=1)
    window = np.full((4, 8), 1.2)
    for _ in range(400):
        pred.train(window, np.full(4, 1.2))
    out = pred.cell.forward(pred._encode(window))[1] * pred.norm
    assert np.all(np.abs(out - 1.2) / 1.2 < 0.05)
    # the op-level fallback path also converges to the constant
    assert predict_backlog(pred, [1.2] * 8, current_backlog=3) == pytest.approx(
        3 + pred.predict([1.2] * 8) - 1.0)


def test_predictor_beats_last_value_on_sinusoid():
    cfg = RoutingConfig(predictor_window=12)
    pred = ParPredictor(cfg, seed=2)
    rng = np.random.default_rng(5)
    series = [rng.poisson(0.5 * (1 + 0.9 * math.sin(2 * math.pi * t / 200)))
              for t in range(4000)]
    w = cfg.predictor_window
    for t in range(w, 3000):
        window = np.array([series[t - w:t]], dtype=float)
        pred.train(window, np.array([series[t]], dtype=float))
    assert pred.cell_is_better
    err_cell = 0.0
    err_last = 0.0
    for t in range(3000, 4000):
        window = series[t - w:t]
        err_cell += (pred.predict(window) - series[t]) ** 2
        err_last += (window[-1] - series[t]) ** 2
    assert err_cell < err_last


def chain_sim(num_packets):
    cfg = RoutingConfig(link_loss_prob=0.0)
    positions = np.array([[8.0, 0.0], [16.0, 0.0]])
    sim = RoutingSim(cfg, "par_predict", 2, seed=0, positions=positions,
                     traffic=TrafficModel(mean_pps=0.0, num_uavs=2))
    for i in range(num_packets):
        pkt = Packet(i, 1, 0, cfg.packet_bits, hops=[1])
        sim._enqueue(1, pkt)
        sim.generated += 1
    return sim


def test_chain_single_packet_hand_trace():
    # slot 0: relay 1 sends; slot 1: relay 0 receives and forwards;
    # slot 2: GCS delivery -> 2 ms end to end
    sim = chain_sim(1)
    stats = sim.run(1)
    assert stats.delivered == 1
    assert stats.latencies_ms == [2.0]
    assert sim.delivered[0].hops == [1, 0]


def test_chain_queueing_hand_trace():
    # three packets pipeline through the two-relay chain: 2, 3, 4 ms
    sim = chain_sim(3)
    stats = sim.run(1)
    assert sorted(stats.latencies_ms) == [2.0, 3.0, 4.0]


def test_zero_traffic_run():
    cfg = RoutingConfig()
    stats = simulate(cfg, "shortest_path", 5, 500, seed=0,
                     traffic=TrafficModel(mean_pps=0.0, num_uavs=5))
    assert stats.generated == 0
    assert stats.delivered == 0
    assert stats.latencies_ms == []
    assert stats.mean_latency_ms == 0.0


def test_run_invariants_and_accounting():
    cfg = RoutingConfig(validate_selection=True)
    sim = RoutingSim(cfg, "par_predict", 10, seed=4)
    stats = sim.run(3000)
    assert sim.fifo_violations == 0
    assert sim.conservation_violations == 0
    assert stats.dropped == 0
    assert stats.delivered == stats.generated  # drained
    for pkt in sim.delivered:
        assert len(set(pkt.hops)) == len(pkt.hops)
        assert pkt.delivered_slot >= pkt.created_slot


def test_determinism():
    cfg = RoutingConfig()
    a = simulate(cfg, "par_predict", 8, 1500, seed=9)
    b = simulate(cfg, "par_predict", 8, 1500, seed=9)
    assert a.latencies_ms == b.latencies_ms
    assert a.delivered == b.delivered


def test_hop_weight_only_matches_shortest_path_routes():
    cfg = RoutingConfig(weight_backlog=0.0, weight_delay=0.0, weight_hops=1.0,
                        link_loss_prob=0.0)
    a = RoutingSim(cfg, "par_predict", 8, seed=11)
    b = RoutingSim(RoutingConfig(link_loss_prob=0.0), "shortest_path", 8, seed=11)
    sa = a.run(1200)
    sb = b.run(1200)
    assert sa.delivered == sb.delivered
    routes_a = {p.id: p.hops for p in a.delivered}
    routes_b = {p.id: p.hops for p in b.delivered}
    assert routes_a == routes_b


def test_ack_timeout_forces_reselection():
    # 100% loss to one candidate is impossible here, so force loss on the
    # first transmission by cranking loss probability, then confirm the
    # packet still gets through after the timeout stall
    cfg = RoutingConfig(link_loss_prob=1.0)
    positions = np.array([[8.0, 0.0], [16.0, 0.0]])
    sim = RoutingSim(cfg, "shortest_path", 2, seed=0, positions=positions,
                     traffic=TrafficModel(mean_pps=0.0, num_uavs=2))
    pkt = Packet(0, 1, 0, cfg.packet_bits, hops=[1])
    sim._enqueue(1, pkt)
    sim.generated += 1
    for t in range(60):
        sim.step(t, arrivals_enabled=False)
    # every send lost: packet never delivered but always accounted for
    assert sim.conservation_violations == 0
    assert sim.outstanding() == 1


def test_weights_validation():
    with pytest.raises(ValueError):
        RoutingConfig(weight_backlog=0.5, weight_delay=0.5, weight_hops=0.5)
    with pytest.raises(ValueError):
        RoutingConfig(weight_backlog=-0.1, weight_delay=0.6, weight_hops=0.5)
    with pytest.raises(ValueError):
        RoutingConfig(ack_timeout_ms=0)


def test_protocol_name_validation():
    with pytest.raises(ValueError):
        RoutingSim(RoutingConfig(), "flooding", 5, 0)
    with pytest.raises(ValueError):
        RoutingSim(RoutingConfig(), "par_predict", 1, 0)
