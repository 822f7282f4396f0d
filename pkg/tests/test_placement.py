import numpy as np
import pytest

from leomoe.activation import ActivationModel, activation_probs, ranked_weights, layer_comp_latency
from leomoe.constellation import ConstellationConfig, GridCoord
from leomoe.placement import (
    FeasibilityError,
    PlacementPlan,
    baseline_rand_intra,
    baseline_rand_intra_cg,
    baseline_rand_place,
    brute_force_placement,
    exhaustive_layer_latency,
    gateway_position,
    optimal_expert_placement,
    read_plan,
    ring_partition,
    write_plan,
)
from leomoe.routing import ExpectedPathLatencies


def _epl(candidates, values, layer=1):
    vals = np.asarray(values, dtype=float)
    return ExpectedPathLatencies(
        layer=layer,
        gateway=GridCoord(0, 0),
        next_gateway=GridCoord(0, 0),
        candidates=tuple(candidates),
        values=vals,
        finite_weight=np.isfinite(vals).astype(float),
        n_slots=1,
        n_survival_samples=1,
    )


def test_ring_partition_bands():
    cfg = ConstellationConfig(4, 20)
    subnets = ring_partition(cfg, 4)
    assert [s.layer for s in subnets] == [1, 2, 3, 4]
    assert (subnets[1].y_lo, subnets[1].y_hi) == (5, 9)
    seen = set()
    for s in subnets:
        assert s.size == 20
        assert all(s.y_lo <= c.y <= s.y_hi for c in s.nodes)
        assert not (seen & set(s.nodes))
        seen |= set(s.nodes)
    assert len(seen) == 80


def test_ring_partition_leftover_rows_are_relays():
    cfg = ConstellationConfig(2, 7)
    subnets = ring_partition(cfg, 3)
    covered = {c for s in subnets for c in s.nodes}
    assert len(covered) == 2 * 6
    assert GridCoord(0, 6) not in covered and GridCoord(1, 6) not in covered


def test_ring_partition_errors():
    cfg = ConstellationConfig(1, 4)
    with pytest.raises(FeasibilityError, match="n_layers"):
        ring_partition(cfg, 0)
    with pytest.raises(FeasibilityError, match="sats_per_plane"):
        ring_partition(cfg, 5)
    with pytest.raises(FeasibilityError, match="subnet capacity"):
        ring_partition(cfg, 2, n_experts=2)
    assert issubclass(FeasibilityError, ValueError)


def test_gateway_position_examples():
    big = ConstellationConfig(33, 32)
    assert gateway_position(big, 32, 1) == GridCoord(16, 0)
    assert gateway_position(big, 32, 32) == GridCoord(16, 31)
    mid = ConstellationConfig(4, 20)
    assert gateway_position(mid, 4, 2) == GridCoord(2, 7)
    with pytest.raises(ValueError):
        gateway_position(mid, 4, 0)
    with pytest.raises(ValueError):
        gateway_position(mid, 4, 5)
    with pytest.raises(FeasibilityError):
        gateway_position(ConstellationConfig(2, 3), 4, 1)


def test_plan_validation():
    cfg = ConstellationConfig(2, 4)
    subnets = ring_partition(cfg, 2)
    plan = PlacementPlan(
        gateways=(GridCoord(1, 0), GridCoord(1, 2)),
        assignments=({0: GridCoord(0, 0), 1: GridCoord(0, 1)}, {0: GridCoord(0, 2), 1: GridCoord(0, 3)}),
        strategy_tag="test",
    )
    plan.validate(subnets=subnets)

    with pytest.raises(ValueError, match="assign experts"):
        PlacementPlan(
            gateways=(GridCoord(1, 0),),
            assignments=({0: GridCoord(0, 0), 2: GridCoord(0, 1)},),
            strategy_tag="test",
        ).validate()
    with pytest.raises(ValueError, match="stacks"):
        PlacementPlan(
            gateways=(GridCoord(1, 0),),
            assignments=({0: GridCoord(0, 0), 1: GridCoord(0, 0)},),
            strategy_tag="test",
        ).validate()
    with pytest.raises(ValueError, match="gateway"):
        PlacementPlan(
            gateways=(GridCoord(0, 0),),
            assignments=({0: GridCoord(0, 0)},),
            strategy_tag="test",
        ).validate()
    with pytest.raises(ValueError, match="outside its subnet"):
        PlacementPlan(
            gateways=(GridCoord(1, 0),),
            assignments=({0: GridCoord(0, 3)},),
            strategy_tag="test",
        ).validate(subnets=subnets)
    with pytest.raises(ValueError):
        PlacementPlan(gateways=(), assignments=(), strategy_tag="test")
    # stacking allowed when the per-satellite limit says so
    PlacementPlan(
        gateways=(GridCoord(1, 0),),
        assignments=({0: GridCoord(0, 0), 1: GridCoord(0, 0)},),
        strategy_tag="test",
    ).validate(max_experts_per_sat=2)


def test_optimal_placement_rank_matching():
    epl = _epl([GridCoord(0, 0), GridCoord(0, 1), GridCoord(0, 2)], [3.0, 1.0, 2.0])
    got = optimal_expert_placement([0.2, 0.9, 0.5], epl)
    assert got == {1: GridCoord(0, 1), 2: GridCoord(0, 2), 0: GridCoord(0, 0)}


def test_optimal_placement_tie_breaks():
    # equal popularity: lower expert index claims the faster seat
    epl = _epl([GridCoord(0, 0), GridCoord(0, 1)], [2.0, 1.0])
    got = optimal_expert_placement([0.5, 0.5], epl)
    assert got == {0: GridCoord(0, 1), 1: GridCoord(0, 0)}
    # equal latency: smaller coordinate ranks first
    epl2 = _epl([GridCoord(1, 1), GridCoord(0, 2)], [1.0, 1.0])
    got2 = optimal_expert_placement([0.9, 0.1], epl2)
    assert got2 == {0: GridCoord(0, 2), 1: GridCoord(1, 1)}


def test_optimal_placement_needs_reachable_candidates():
    epl = _epl([GridCoord(0, 0), GridCoord(0, 1), GridCoord(0, 2)], [1.0, np.inf, np.inf])
    with pytest.raises(FeasibilityError, match="reachable"):
        optimal_expert_placement([0.6, 0.4], epl)
    # unreachable seats are fine while enough finite ones remain
    got = optimal_expert_placement([1.0], epl)
    assert got == {0: GridCoord(0, 0)}


def test_exhaustive_latency_identity_vs_swap():
    model = ActivationModel(weights=(2.0, 1.0), top_k=1)
    taus = [1.0, 3.0]
    assert exhaustive_layer_latency(model, taus, [0, 1]) == pytest.approx(5.0 / 3.0, abs=1e-14)
    assert exhaustive_layer_latency(model, taus, [1, 0]) == pytest.approx(7.0 / 3.0, abs=1e-14)
    with pytest.raises(ValueError):
        exhaustive_layer_latency(model, taus, [0, 0])


def test_exhaustive_latency_agrees_with_symmetric_polynomials():
    # enumeration vs the telescoped CDF route, over random instances
    rng = np.random.default_rng(14)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        k = int(rng.integers(1, n + 1))
        w = tuple(rng.uniform(0.2, 5.0, size=n))
        taus = np.sort(rng.uniform(0.1, 2.0, size=n))
        perm = rng.permutation(n).tolist()
        model = ActivationModel(weights=w, top_k=k)
        a = exhaustive_layer_latency(model, taus, perm)
        b = layer_comp_latency(ranked_weights(w, perm), k, taus)
        assert a == pytest.approx(b, abs=1e-12)


def test_brute_force_recovers_rank_matching():
    rng = np.random.default_rng(71)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        k = int(rng.integers(1, n))  # k == n ties every permutation
        w = tuple(np.round(rng.uniform(0.2, 5.0, size=n), 6))
        vals = np.round(rng.uniform(0.05, 1.0, size=n + 1), 6)
        model = ActivationModel(weights=w, top_k=k)
        epl = _epl([GridCoord(0, i) for i in range(n + 1)], vals)
        best_map, best_obj = brute_force_placement(model, epl)
        sorted_map = optimal_expert_placement(activation_probs(model), epl)
        # the objective only sees prefix sets of size >= k, so the k fastest
        # seats are interchangeable; beyond them the optimum is unique
        order = sorted(range(n), key=lambda i: (-w[i], i))
        heavy = set(order[:k])
        assert {best_map[e] for e in heavy} == {sorted_map[e] for e in heavy}
        for e in set(range(n)) - heavy:
            assert best_map[e] == sorted_map[e]
        taus = np.sort(vals)[:n]
        ident = [0] * n
        for r, e in enumerate(order):
            ident[r] = e
        assert exhaustive_layer_latency(model, taus, ident) == pytest.approx(best_obj, abs=1e-12)
        for _ in range(4):
            swap = ident.copy()
            i, j = rng.choice(n, size=2, replace=False)
            swap[i], swap[j] = swap[j], swap[i]
            assert exhaustive_layer_latency(model, taus, swap) >= best_obj - 1e-12


def test_brute_force_guards():
    model = ActivationModel(weights=tuple(range(1, 10)), top_k=2)
    epl = _epl([GridCoord(0, i) for i in range(9)], np.arange(1.0, 10.0))
    with pytest.raises(ValueError, match="capped"):
        brute_force_placement(model, epl)
    small = ActivationModel(weights=(1.0, 2.0), top_k=1)
    with pytest.raises(FeasibilityError):
        brute_force_placement(small, _epl([GridCoord(0, 0), GridCoord(0, 1)], [1.0, np.inf]))


def test_rand_place_baseline():
    cfg = ConstellationConfig(4, 8)
    plan = baseline_rand_place(cfg, n_layers=3, n_experts=4, rng=np.random.default_rng(5))
    assert plan.strategy_tag == "rand_place"
    assert plan.n_layers == 3 and plan.n_experts == 4
    plan.validate()
    coords = list(plan.gateways) + [c for a in plan.assignments for c in a.values()]
    assert len(set(coords)) == 3 * 5
    again = baseline_rand_place(cfg, n_layers=3, n_experts=4, rng=np.random.default_rng(5))
    assert again == plan
    with pytest.raises(FeasibilityError):
        baseline_rand_place(ConstellationConfig(1, 3), 2, 1, np.random.default_rng(0))


def test_rand_intra_baseline():
    cfg = ConstellationConfig(3, 8)
    subnets = ring_partition(cfg, 2)
    plan = baseline_rand_intra(subnets, n_experts=3, rng=np.random.default_rng(9))
    plan.validate(subnets=subnets)
    for spec, gw in zip(subnets, plan.gateways):
        assert gw in spec.nodes


def test_rand_intra_cg_baseline():
    cfg = ConstellationConfig(3, 8)
    subnets = ring_partition(cfg, 2)
    plan = baseline_rand_intra_cg(cfg, subnets, n_experts=3, rng=np.random.default_rng(9))
    plan.validate(subnets=subnets)
    assert plan.gateways == (gateway_position(cfg, 2, 1), gateway_position(cfg, 2, 2))


def test_plan_round_trip(tmp_path):
    plan = PlacementPlan(
        gateways=(GridCoord(1, 0), GridCoord(1, 2)),
        assignments=(
            {0: GridCoord(0, 0), 1: GridCoord(2, 1)},
            {0: GridCoord(0, 2), 1: GridCoord(2, 3)},
        ),
        strategy_tag="spacemoe",
        seed=42,
    )
    p = tmp_path / "plan.csv"
    write_plan(plan, p)
    back = read_plan(p)
    assert back == plan

    unseeded = PlacementPlan(
        gateways=(GridCoord(0, 1),),
        assignments=({0: GridCoord(1, 1)},),
        strategy_tag="rand_place",
    )
    p2 = tmp_path / "plan2.csv"
    write_plan(unseeded, p2)
    assert read_plan(p2) == unseeded


def test_read_plan_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("layer,role,expert\n")
    with pytest.raises(ValueError, match="header"):
        read_plan(bad)

    dup = tmp_path / "dup.csv"
    dup.write_text(
        "layer,role,expert,x,y\n1,gateway,-1,0,0\n1,gateway,-1,0,1\n"
    )
    with pytest.raises(ValueError, match="duplicate gateway"):
        read_plan(dup)

    role = tmp_path / "role.csv"
    role.write_text("layer,role,expert,x,y\n1,relay,-1,0,0\n")
    with pytest.raises(ValueError, match="unknown role"):
        read_plan(role)

    gap = tmp_path / "gap.csv"
    gap.write_text(
        "layer,role,expert,x,y\n"
        "1,gateway,-1,0,0\n1,expert,0,0,1\n"
        "3,gateway,-1,0,2\n3,expert,0,0,3\n"
    )
    with pytest.raises(ValueError, match="contiguous"):
        read_plan(gap)
