import math

import numpy as np
import pytest

from leomoe.constellation import ConstellationConfig, GridCoord, propagate
from leomoe.routing import (
    DistanceMatrix,
    TokenParams,
    distance_matrix,
    distance_rows,
    expected_path_latencies,
    expected_path_latencies_bulk,
    hop_cost_array,
    hop_latency,
    path_latency,
    shortest_paths,
    transmission_latency,
)
from leomoe.topology import LinkParams, TopologyModel, TopologyRealization


def _floyd(n, edge_ids, costs):
    """Independent all-pairs oracle (Floyd-Warshall on the undirected graph)."""
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for (u, v), c in zip(edge_ids, costs):
        d[u, v] = min(d[u, v], c)
        d[v, u] = min(d[v, u], c)
    for k in range(n):
        d = np.minimum(d, d[:, k : k + 1] + d[k : k + 1, :])
    return d


def test_transmission_latency_value():
    tok = TokenParams()
    assert tok.bits == 65536
    assert transmission_latency(tok, 100e9) == pytest.approx(6.5536e-7, rel=1e-15)
    with pytest.raises(ValueError):
        transmission_latency(tok, 0.0)
    with pytest.raises(ValueError):
        TokenParams(embed_dim=0)
    with pytest.raises(ValueError):
        TokenParams(quant_bits=0)


def test_hop_latency_on_a_32_ring():
    eph = propagate(ConstellationConfig(1, 32, n_slots=1))
    params, tok = LinkParams(), TokenParams()
    got = hop_latency(eph, params, tok, GridCoord(0, 0), GridCoord(0, 1), 0)
    r = 6921.0
    theta = 2.0 * math.pi / 32
    prop = 2.0 * r * math.sin(theta / 2.0) / 299792.458
    assert got == pytest.approx(prop + 6.5536e-7, rel=1e-12)
    assert abs(prop - 4.527e-3) < 2e-6
    with pytest.raises(ValueError):
        hop_latency(eph, params, tok, GridCoord(0, 0), GridCoord(0, 2), 0)


def test_hop_cost_array_matches_scalar_form():
    cfg = ConstellationConfig(3, 6, n_slots=2, slot_duration_s=200.0)
    eph = propagate(cfg)
    model = TopologyModel(eph, LinkParams())
    tok = TokenParams()
    for slot in range(2):
        costs = hop_cost_array(model, tok, slot)
        for row, (uid, vid) in enumerate(model.cand[:10]):
            scalar = hop_latency(
                eph, model.params, tok, cfg.coord_of(int(uid)), cfg.coord_of(int(vid)), slot
            )
            assert costs[row] == pytest.approx(scalar, rel=1e-9)


def test_shortest_paths_line_graph():
    real = TopologyRealization(n_nodes=4, slot=0, edge_ids=np.array([[0, 1], [1, 2]]))
    dist, pred = shortest_paths(real, np.array([1.0, 2.0]), 0)
    assert dist.tolist() == [0.0, 1.0, 3.0, np.inf]
    assert pred.tolist() == [-1, 0, 1, -1]
    rows = distance_rows(real, np.array([1.0, 2.0]), [0, 2])
    assert rows[0].tolist() == dist.tolist()
    assert rows[1].tolist() == [3.0, 2.0, 0.0, np.inf]


def test_shortest_paths_input_validation():
    real = TopologyRealization(n_nodes=3, slot=0, edge_ids=np.array([[0, 1], [1, 2]]))
    with pytest.raises(ValueError):
        shortest_paths(real, np.array([1.0]), 0)
    with pytest.raises(ValueError):
        shortest_paths(real, np.array([1.0, 0.0]), 0)


def test_distance_matrix_against_floyd_warshall():
    rng = np.random.default_rng(17)
    for _ in range(20):
        n = int(rng.integers(2, 13))
        all_pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        m = int(rng.integers(1, len(all_pairs) + 1))
        pick = rng.choice(len(all_pairs), size=m, replace=False)
        edge_ids = np.array([all_pairs[i] for i in pick])
        costs = rng.uniform(0.1, 5.0, size=m)
        real = TopologyRealization(n_nodes=n, slot=0, edge_ids=edge_ids)
        dm = distance_matrix(real, costs)
        want = _floyd(n, edge_ids, costs)
        finite = np.isfinite(want)
        assert np.array_equal(np.isfinite(dm.entries), finite)
        assert np.allclose(dm.entries[finite], want[finite], rtol=1e-9)
        # metric sanity on the realized graph
        assert np.array_equal(dm.entries, dm.entries.T)
        assert np.all(np.diag(dm.entries) == 0.0)


def test_triangle_inequality():
    rng = np.random.default_rng(29)
    edge_ids = np.array([(u, v) for u in range(8) for v in range(u + 1, 8) if rng.random() < 0.5])
    costs = rng.uniform(0.5, 2.0, size=len(edge_ids))
    dm = distance_matrix(TopologyRealization(n_nodes=8, slot=0, edge_ids=edge_ids), costs)
    d = dm.entries
    for j in range(8):
        lhs = d
        rhs = d[:, j : j + 1] + d[j : j + 1, :]
        ok = np.isfinite(rhs)
        assert np.all(lhs[ok] <= rhs[ok] + 1e-12)


def test_path_latency_two_hop_example():
    real = TopologyRealization(n_nodes=3, slot=0, edge_ids=np.array([[0, 1], [1, 2]]))
    dm = distance_matrix(real, np.array([1.0, 1.0]))
    assert path_latency(dm, (0, 2), 1, 0.5) == pytest.approx(2.5, abs=1e-15)
    dm2 = distance_matrix(real, np.array([1.0, 2.0]))
    assert path_latency(dm2, (0, 2), 1, 0.5) == pytest.approx(3.5, abs=1e-15)


def test_distance_matrix_grid_addressing():
    cfg = ConstellationConfig(2, 3, n_slots=1)
    eph = propagate(cfg)
    model = TopologyModel(eph, LinkParams())
    costs = hop_cost_array(model, TokenParams(), 0)
    real = model.realization(0, uniforms=np.zeros(model.n_candidates))
    dm = distance_matrix(real, costs[real.cand_idx])
    u, v = GridCoord(0, 0), GridCoord(1, 2)
    assert dm.latency(u, v) == dm.latency(cfg.coord_id(u), cfg.coord_id(v))
    bare = DistanceMatrix(slot=0, entries=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        bare.latency(GridCoord(0, 0), GridCoord(0, 1))


def _toy_2x2(survival=0.6):
    eph = propagate(ConstellationConfig(2, 2, n_slots=1, slot_duration_s=10.0))
    return TopologyModel(eph, LinkParams(survival_prob=survival))


def _exact_expectation(model, tok, candidates, gateway, compute_s):
    """Enumerate every survival subset of the slot-0 candidate edges."""
    cfg = model.config
    costs = hop_cost_array(model, tok, 0)
    det_idx = np.where(model.det_mask[0])[0]
    gid = cfg.coord_id(gateway)
    cids = [cfg.coord_id(c) for c in candidates]
    acc = np.zeros(len(candidates))
    mass = np.zeros(len(candidates))
    for bits in range(1 << det_idx.size):
        sel = det_idx[[i for i in range(det_idx.size) if bits >> i & 1]]
        prob = 1.0
        for i, e in enumerate(det_idx):
            p = model.survival[e]
            prob *= p if bits >> i & 1 else 1.0 - p
        dist = _floyd(cfg.n_sats, model.cand[sel], costs[sel])
        for k, cid in enumerate(cids):
            tau = compute_s + 2.0 * dist[gid, cid]
            if math.isfinite(tau):
                acc[k] += prob * tau
                mass[k] += prob
    return acc / mass, mass


def test_expected_latency_matches_subset_enumeration():
    # 4 candidate edges -> 16 survival subsets enumerated exactly
    model = _toy_2x2(survival=0.6)
    tok = TokenParams()
    g = GridCoord(0, 0)
    cands = [GridCoord(0, 1), GridCoord(1, 0), GridCoord(1, 1)]
    exact, exact_mass = _exact_expectation(model, tok, cands, g, compute_s=0.005)
    est = expected_path_latencies(
        model, tok, cands, g, g, compute_s=0.005, n_survival_samples=4000, seed=3
    )
    assert np.allclose(est.values, exact, rtol=0.02)
    assert np.allclose(est.finite_weight, exact_mass, atol=0.03)


def test_survival_one_equals_deterministic():
    model = _toy_2x2(survival=1.0)
    tok = TokenParams()
    g = GridCoord(0, 0)
    cands = [GridCoord(0, 1), GridCoord(1, 1)]
    sampled = expected_path_latencies(
        model, tok, cands, g, g, compute_s=0.01, n_survival_samples=7, seed=5
    )
    det = expected_path_latencies(
        model, tok, cands, g, g, compute_s=0.01, include_survival=False
    )
    # every draw keeps the full feasible graph; only summation order differs
    assert np.allclose(sampled.values, det.values, rtol=1e-13)
    assert np.all(det.finite_weight == 1.0)


def _ring_model(n_slots=3):
    per = ConstellationConfig(1, 6).orbital_period_s
    eph = propagate(ConstellationConfig(1, 6, n_slots=n_slots, slot_duration_s=per / n_slots))
    return TopologyModel(eph, LinkParams(survival_prob=0.9))


def test_bulk_matches_single_layer_bitwise():
    model = _ring_model()
    tok = TokenParams()
    gateways = [GridCoord(0, 0), GridCoord(0, 3)]
    layer_cands = [
        [GridCoord(0, 1), GridCoord(0, 2)],
        [GridCoord(0, 4), GridCoord(0, 5)],
    ]
    bulk = expected_path_latencies_bulk(
        model, tok, layer_cands, gateways, compute_s=0.01, n_survival_samples=40, seed=12
    )
    assert [b.layer for b in bulk] == [1, 2]
    for layer0, (gw, nxt) in enumerate([(gateways[0], gateways[1]), (gateways[1], gateways[0])]):
        single = expected_path_latencies(
            model,
            tok,
            layer_cands[layer0],
            gw,
            nxt,
            compute_s=0.01,
            n_survival_samples=40,
            seed=12,
            layer=layer0 + 1,
        )
        assert np.array_equal(bulk[layer0].values, single.values)
        assert np.array_equal(bulk[layer0].finite_weight, single.finite_weight)
        assert bulk[layer0].gateway == gw and bulk[layer0].next_gateway == nxt


def test_self_loop_gateway_pair():
    model = _ring_model()
    tok = TokenParams()
    g = GridCoord(0, 0)
    bulk = expected_path_latencies_bulk(
        model, tok, [[GridCoord(0, 2)]], [g], compute_s=0.0, n_survival_samples=25, seed=4
    )
    single = expected_path_latencies(
        model, tok, [GridCoord(0, 2)], g, g, compute_s=0.0, n_survival_samples=25, seed=4
    )
    assert np.array_equal(bulk[0].values, single.values)


def test_disconnect_policies_on_isolated_candidate():
    # zero out both ring edges around (0,2): that candidate can never connect
    per = ConstellationConfig(1, 6).orbital_period_s
    eph = propagate(ConstellationConfig(1, 6, n_slots=2, slot_duration_s=per / 2))
    dead = {
        (GridCoord(0, 1), GridCoord(0, 2)): 0.0,
        (GridCoord(0, 2), GridCoord(0, 3)): 0.0,
    }
    model = TopologyModel(eph, LinkParams(survival_prob=1.0), survival_overrides=dead)
    tok = TokenParams()
    g = GridCoord(0, 0)
    cands = [GridCoord(0, 2), GridCoord(0, 4)]
    skip = expected_path_latencies(
        model, tok, cands, g, g, compute_s=0.01, n_survival_samples=8, seed=0
    )
    assert np.isinf(skip.values[0]) and skip.finite_weight[0] == 0.0
    assert np.isfinite(skip.values[1]) and skip.finite_weight[1] == pytest.approx(1.0)
    pen = expected_path_latencies(
        model,
        tok,
        cands,
        g,
        g,
        compute_s=0.01,
        n_survival_samples=8,
        seed=0,
        disconnect_policy="penalty",
        penalty_s=2.0,
    )
    assert pen.values[0] == pytest.approx(2.01, abs=1e-12)
    assert pen.values[1] == pytest.approx(skip.values[1], rel=1e-12)


def test_expected_latency_validation():
    model = _ring_model()
    tok = TokenParams()
    g = GridCoord(0, 0)
    with pytest.raises(ValueError):
        expected_path_latencies(model, tok, [g], g, g, compute_s=0.0)
    with pytest.raises(ValueError):
        expected_path_latencies(
            model, tok, [GridCoord(0, 1)], g, g, compute_s=0.0, disconnect_policy="drop"
        )
    with pytest.raises(ValueError):
        expected_path_latencies(
            model, tok, [GridCoord(0, 1)], g, g, compute_s=0.0, alpha=np.array([0.5, 0.5])
        )
    with pytest.raises(ValueError):
        expected_path_latencies_bulk(
            model, tok, [[GridCoord(0, 1)]], [g, GridCoord(0, 3)], compute_s=0.0
        )
    with pytest.raises(ValueError):
        expected_path_latencies(
            model, tok, [GridCoord(0, 1)], g, g, compute_s=0.0, n_survival_samples=0
        )


def test_one_hot_alpha_reduces_to_single_slot():
    model = _ring_model(n_slots=4)
    tok = TokenParams()
    g, nxt = GridCoord(0, 0), GridCoord(0, 3)
    cands = [GridCoord(0, 1), GridCoord(0, 5)]
    alpha = np.array([0.0, 0.0, 1.0, 0.0])
    got = expected_path_latencies(
        model, tok, cands, g, nxt, compute_s=0.02, alpha=alpha, include_survival=False
    )
    costs = hop_cost_array(model, tok, 2)
    idx = np.where(model.det_mask[2])[0]
    real = TopologyRealization(
        n_nodes=6, slot=2, edge_ids=model.cand[idx], cand_idx=idx, config=model.config
    )
    rows = distance_rows(real, costs[idx], [g, nxt])
    cids = [model.config.coord_id(c) for c in cands]
    want = 0.02 + rows[0, cids] + rows[1, cids]
    assert np.array_equal(got.values, want)


def test_value_of_lookup():
    model = _ring_model()
    got = expected_path_latencies(
        model,
        TokenParams(),
        [GridCoord(0, 1), GridCoord(0, 2)],
        GridCoord(0, 0),
        GridCoord(0, 3),
        compute_s=0.0,
        n_survival_samples=5,
    )
    assert got.value_of(GridCoord(0, 2)) == got.values[1]
    with pytest.raises(ValueError):
        got.value_of(GridCoord(0, 4))
