"""End-to-end token latency: per-trial sampling, reports, strategy sweeps.

A trial draws one time slot, one link-survival realization and one activated
expert set per layer, then charges each layer the latency of its slowest
activated expert path (gateway -> expert -> next gateway, plus compute). The
end-to-end latency is the sum over layers, matching the pipelined
layer-per-subnet execution with wraparound back to the first gateway.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .activation import ActivationModel, activation_probs, sample_topk
from .constellation import GridCoord
from .placement import (
    PlacementPlan,
    baseline_rand_place,
    baseline_rand_intra,
    baseline_rand_intra_cg,
    optimal_expert_placement,
)
from .routing import (
    DistanceMatrix,
    TokenParams,
    distance_rows,
    expected_path_latencies_bulk,
    hop_cost_array,
)
from .streams import substream
from .topology import TopologyModel

STRATEGIES = ("spacemoe", "rand_place", "rand_intra", "rand_intra_cg")


@dataclass(frozen=True)
class ComputeProfile:
    """On-board compute capability and per-role workloads.

    flops_per_sec is the effective satellite throughput. parallel_efficiency
    divides stacked expert compute when several experts share one satellite:
    below 1 it models contention, above 1 genuine on-board parallel units.
    max_experts_per_sat = 1 keeps the single-expert model.
    """

    flops_per_expert: float
    flops_per_gateway: float
    flops_per_sec: float
    parallel_efficiency: float = 1.0
    max_experts_per_sat: int = 1

    def __post_init__(self) -> None:
        if self.flops_per_expert < 0 or self.flops_per_gateway < 0:
            raise ValueError("workloads must be non-negative")
        if self.flops_per_sec <= 0:
            raise ValueError(f"flops_per_sec must be positive, got {self.flops_per_sec}")
        if self.parallel_efficiency <= 0.0:
            raise ValueError(
                f"parallel_efficiency must be positive, got {self.parallel_efficiency}"
            )
        if self.max_experts_per_sat < 1:
            raise ValueError(
                f"max_experts_per_sat must be >= 1, got {self.max_experts_per_sat}"
            )

    @property
    def t_expert(self) -> float:
        return self.flops_per_expert / self.flops_per_sec

    @property
    def t_gateway(self) -> float:
        return self.flops_per_gateway / self.flops_per_sec

    @property
    def compute_s(self) -> float:
        """Per-path compute charge: one expert plus the gateway."""
        return self.t_expert + self.t_gateway


def compute_latency(profile: ComputeProfile, workload_flops: float) -> float:
    """Seconds to burn a FLOP count at the profile's throughput."""
    if workload_flops < 0:
        raise ValueError(f"workload must be non-negative, got {workload_flops}")
    return workload_flops / profile.flops_per_sec


def default_workload_split(
    n_layers: int,
    top_k: int,
    total_forward_flops: float = 36.3e12,
    seq_len: int = 4096,
) -> tuple[float, float]:
    """(gateway_flops, per_expert_flops) for one token through one layer.

    Modeling choice: the forward cost of one token is the whole-sequence cost
    divided by its length, spread evenly over layers, and split 50/50 between
    the gateway side (attention, routing, aggregation) and the active experts
    (each of the top_k experts carrying an equal share).
    """
    if n_layers < 1 or top_k < 1:
        raise ValueError("n_layers and top_k must be >= 1")
    per_layer = total_forward_flops / seq_len / n_layers
    return per_layer / 2.0, per_layer / 2.0 / top_k


def layer_latency_sample(
    plan: PlacementPlan,
    layer: int,
    activated: Iterable[int],
    dm: DistanceMatrix,
    profile: ComputeProfile,
) -> float:
    """Latency of one layer in one realization: slowest activated expert path."""
    if not 1 <= layer <= plan.n_layers:
        raise ValueError(f"layer must lie in [1, {plan.n_layers}], got {layer}")
    active = sorted(set(int(i) for i in activated))
    if not active:
        raise ValueError("activated set must be non-empty")
    amap = plan.assignments[layer - 1]
    gw = plan.gateways[layer - 1]
    nxt = plan.gateways[layer % plan.n_layers]
    worst = 0.0
    for e in active:
        if e not in amap:
            raise ValueError(f"expert {e} not assigned in layer {layer}")
        c = amap[e]
        tau = profile.compute_s + dm.latency(gw, c) + dm.latency(c, nxt)
        worst = max(worst, tau)
    return worst


def multi_expert_effective_latency(
    profile: ComputeProfile, routing_s: float, q_active: int
) -> float:
    """Per-satellite finish time when q_active experts share the device.

    Expert compute serializes (scaled by the parallel efficiency) on top of
    the satellite's routing legs; the gateway charge stays per-path.
    """
    if routing_s < 0:
        raise ValueError(f"routing_s must be non-negative, got {routing_s}")
    if not 0 <= q_active <= profile.max_experts_per_sat:
        raise ValueError(
            f"q_active must lie in [0, {profile.max_experts_per_sat}], got {q_active}"
        )
    return (
        routing_s
        + (q_active / profile.parallel_efficiency) * profile.t_expert
        + profile.t_gateway
    )


def multi_expert_layer_latency(
    plan: PlacementPlan,
    layer: int,
    activated: Iterable[int],
    dm: DistanceMatrix,
    profile: ComputeProfile,
) -> float:
    """Layer latency when satellites may host several activated experts.

    Groups the activated experts by hosting satellite and takes the slowest
    satellite's finish time. With one expert per satellite this equals
    layer_latency_sample exactly.
    """
    if not 1 <= layer <= plan.n_layers:
        raise ValueError(f"layer must lie in [1, {plan.n_layers}], got {layer}")
    active = sorted(set(int(i) for i in activated))
    if not active:
        raise ValueError("activated set must be non-empty")
    amap = plan.assignments[layer - 1]
    gw = plan.gateways[layer - 1]
    nxt = plan.gateways[layer % plan.n_layers]
    loads: dict[GridCoord, int] = {}
    for e in active:
        if e not in amap:
            raise ValueError(f"expert {e} not assigned in layer {layer}")
        loads[amap[e]] = loads.get(amap[e], 0) + 1
    worst = 0.0
    for c, q in loads.items():
        routing = dm.latency(gw, c) + dm.latency(c, nxt)
        worst = max(worst, multi_expert_effective_latency(profile, routing, q))
    return worst


def token_latency_trial(
    plan: PlacementPlan,
    model: TopologyModel,
    tok: TokenParams,
    activation_models: Sequence[ActivationModel],
    profile: ComputeProfile,
    rng: np.random.Generator,
    sampler: str = "auto",
) -> tuple[np.ndarray, float]:
    """One end-to-end trial; returns (per-layer latencies, their sum).

    Draw order is fixed so that coupled comparisons across parameter values
    reuse identical randomness: slot index, one survival uniform per candidate
    edge, then one activation draw per layer. Unreachable expert paths leave
    +inf in the layer entry; disconnect policy is the caller's business.
    """
    if len(activation_models) != plan.n_layers:
        raise ValueError("one activation model per layer required")
    n_layers = plan.n_layers
    cfg = model.config
    slot = int(rng.integers(cfg.n_slots))
    uniforms = rng.random(model.n_candidates)
    real = model.realization(slot, uniforms=uniforms)
    costs = hop_cost_array(model, tok, slot)[real.cand_idx]

    gw_ids = [cfg.coord_id(g) for g in plan.gateways]
    sources = sorted(set(gw_ids))
    src_row = {nid: k for k, nid in enumerate(sources)}
    rows = distance_rows(real, costs, sources)

    multi = profile.max_experts_per_sat > 1
    per_layer = np.empty(n_layers)
    for layer0 in range(n_layers):
        active = sample_topk(activation_models[layer0], rng, method=sampler)
        amap = plan.assignments[layer0]
        d_in = rows[src_row[gw_ids[layer0]]]
        d_out = rows[src_row[gw_ids[(layer0 + 1) % n_layers]]]
        if multi:
            loads: dict[int, int] = {}
            for e in active:
                cid = cfg.coord_id(amap[e])
                loads[cid] = loads.get(cid, 0) + 1
            worst = 0.0
            for cid, q in loads.items():
                routing = float(d_in[cid] + d_out[cid])
                if not np.isfinite(routing):
                    worst = np.inf
                    break
                worst = max(worst, multi_expert_effective_latency(profile, routing, q))
        else:
            worst = 0.0
            for e in active:
                cid = cfg.coord_id(amap[e])
                worst = max(worst, profile.compute_s + float(d_in[cid] + d_out[cid]))
        per_layer[layer0] = worst
    return per_layer, float(per_layer.sum())


@dataclass(frozen=True)
class LatencyReport:
    """Summary statistics of an evaluate() run."""

    strategy_tag: str
    seed: int
    n_trials: int
    n_kept: int
    disconnect_fraction: float
    per_layer_mean: tuple[float, ...]
    per_layer_std: tuple[float, ...]
    e2e_mean: float
    e2e_std: float
    e2e_min: float
    e2e_max: float

    @property
    def n_layers(self) -> int:
        return len(self.per_layer_mean)


def _std(x: np.ndarray, axis=None) -> np.ndarray | float:
    n = x.shape[0]
    return np.std(x, axis=axis, ddof=1) if n > 1 else np.zeros_like(np.mean(x, axis=axis))


def evaluate(
    plan: PlacementPlan,
    scenario,
    n_trials: int,
    seed: int,
    runtime=None,
) -> LatencyReport:
    """Monte-Carlo token latency of a plan under a scenario.

    Trial t draws from substream(seed, "trial", t), so a longer run extends a
    shorter one without disturbing its trials. The scenario's disconnect
    policy either drops trials touching an unreachable expert ("skip",
    reported in disconnect_fraction) or charges penalty_s per affected layer
    ("penalty").
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if runtime is None:
        from .scenario import build_runtime

        runtime = build_runtime(scenario)
    ev = scenario.eval
    samples = np.empty((n_trials, plan.n_layers))
    for t in range(n_trials):
        rng = substream(seed, "trial", t)
        per_layer, _ = token_latency_trial(
            plan,
            runtime.topo,
            scenario.token,
            runtime.activation_models,
            scenario.compute,
            rng,
            sampler=ev.sampler,
        )
        samples[t] = per_layer

    bad = ~np.isfinite(samples).all(axis=1)
    if ev.disconnect_policy == "penalty":
        samples = np.where(np.isfinite(samples), samples, ev.penalty_s)
        kept = samples
    else:
        kept = samples[~bad]
    n_kept = kept.shape[0]
    if n_kept == 0:
        nanl = tuple(float("inf") for _ in range(plan.n_layers))
        return LatencyReport(
            strategy_tag=plan.strategy_tag, seed=seed, n_trials=n_trials, n_kept=0,
            disconnect_fraction=1.0, per_layer_mean=nanl, per_layer_std=nanl,
            e2e_mean=float("inf"), e2e_std=float("inf"),
            e2e_min=float("inf"), e2e_max=float("inf"),
        )
    e2e = kept.sum(axis=1)
    return LatencyReport(
        strategy_tag=plan.strategy_tag,
        seed=seed,
        n_trials=n_trials,
        n_kept=n_kept,
        disconnect_fraction=float(np.mean(bad)),
        per_layer_mean=tuple(float(v) for v in kept.mean(axis=0)),
        per_layer_std=tuple(float(v) for v in np.atleast_1d(_std(kept, axis=0))),
        e2e_mean=float(e2e.mean()),
        e2e_std=float(_std(e2e)),
        e2e_min=float(e2e.min()),
        e2e_max=float(e2e.max()),
    )


def make_plan(scenario, strategy: str, seed: int, runtime=None) -> PlacementPlan:
    """Build a placement plan for one strategy under a scenario.

    "spacemoe" estimates expected path latencies per subnet (survival draws
    from substream(seed, "pathlat", ...)) and rank-matches experts to
    candidates; the rand_* baselines draw from substream(seed, "place", tag).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if runtime is None:
        from .scenario import build_runtime

        runtime = build_runtime(scenario)
    cfg = scenario.constellation
    n_experts = scenario.moe.n_experts
    if strategy == "rand_place":
        plan = baseline_rand_place(
            cfg, scenario.moe.n_layers, n_experts, substream(seed, "place", "rand_place")
        )
    elif strategy == "rand_intra":
        plan = baseline_rand_intra(
            runtime.subnets, n_experts, substream(seed, "place", "rand_intra")
        )
    elif strategy == "rand_intra_cg":
        plan = baseline_rand_intra_cg(
            cfg, runtime.subnets, n_experts, substream(seed, "place", "rand_intra_cg")
        )
    else:
        lat = expected_path_latencies_bulk(
            runtime.topo,
            scenario.token,
            [
                [c for c in spec.nodes if c != runtime.central_gateways[spec.layer - 1]]
                for spec in runtime.subnets
            ],
            runtime.central_gateways,
            scenario.compute.compute_s,
            n_survival_samples=scenario.eval.n_survival_samples,
            seed=seed,
            disconnect_policy=scenario.eval.disconnect_policy,
            penalty_s=scenario.eval.penalty_s,
        )
        assignments = []
        for layer0, spec in enumerate(runtime.subnets):
            probs = activation_probs(runtime.activation_models[layer0])
            assignments.append(optimal_expert_placement(probs, lat[layer0]))
        plan = PlacementPlan(
            gateways=tuple(runtime.central_gateways),
            assignments=tuple(assignments),
            strategy_tag="spacemoe",
        )
    return PlacementPlan(
        gateways=plan.gateways,
        assignments=plan.assignments,
        strategy_tag=plan.strategy_tag,
        seed=seed,
    )


@dataclass(frozen=True)
class SweepCell:
    """One (axis value, strategy) evaluation inside a sweep."""

    axis: str
    value_label: str
    strategy: str
    report: LatencyReport


def sweep(
    scenario,
    grid: Mapping[str, Sequence],
    strategies: Sequence[str],
    n_trials: int,
    seed: int,
) -> list[SweepCell]:
    """Evaluate strategies over per-axis scenario variants.

    Axes vary one scenario field at a time from the base scenario. The same
    root seed drives every cell, so same-axis series are coupled: a cell
    differs from its neighbor only through the parameter under sweep.
    """
    from .scenario import apply_axis, build_runtime

    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    cells: list[SweepCell] = []
    for axis, values in grid.items():
        for value in values:
            cell_scenario, label = apply_axis(scenario, axis, value)
            runtime = build_runtime(cell_scenario)
            for strategy in strategies:
                plan = make_plan(cell_scenario, strategy, seed, runtime=runtime)
                report = evaluate(plan, cell_scenario, n_trials, seed, runtime=runtime)
                cells.append(
                    SweepCell(axis=axis, value_label=label, strategy=strategy, report=report)
                )
    return cells
