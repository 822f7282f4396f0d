"""Layer subnets, gateway selection, expert placement and baselines.

The constellation is cut into per-layer subnets along the ring direction;
each subnet gets a central gateway and hosts its layer's experts. The
optimized placement pairs popularity-sorted experts with latency-sorted
candidate satellites, which is optimal for the slowest-activated-expert
objective; random baselines ignore popularity, subnets, or both.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations
from typing import Mapping, Sequence

import numpy as np

from .activation import ActivationModel, subset_pmf
from .constellation import ConstellationConfig, GridCoord
from .routing import ExpectedPathLatencies


class FeasibilityError(ValueError):
    """A scenario cannot host the requested layer/expert layout."""


@dataclass(frozen=True)
class SubnetSpec:
    """Nodes assigned to one layer (1-based), spanning rows y_lo..y_hi."""

    layer: int
    y_lo: int
    y_hi: int
    nodes: tuple[GridCoord, ...]

    @property
    def size(self) -> int:
        return len(self.nodes)


def ring_partition(
    config: ConstellationConfig, n_layers: int, n_experts: int | None = None
) -> list[SubnetSpec]:
    """Split the grid into n_layers contiguous row bands of floor(N_y/L) rows.

    Every plane contributes its rows to every band, so band l (1-based) holds
    rows (l-1)*y_delta .. l*y_delta - 1 across all planes. Leftover rows when
    N_y % L != 0 belong to no subnet and act as relay-only satellites. Raises
    FeasibilityError when the bands cannot exist or cannot hold one gateway
    plus n_experts distinct satellites each.
    """
    nx, ny = config.n_planes, config.sats_per_plane
    if n_layers < 1:
        raise FeasibilityError(f"n_layers must be >= 1, got {n_layers}")
    if ny < n_layers:
        raise FeasibilityError(
            f"sats_per_plane ({ny}) < n_layers ({n_layers}): ring partition infeasible"
        )
    y_delta = ny // n_layers
    if n_experts is not None and nx * y_delta < n_experts + 1:
        raise FeasibilityError(
            f"subnet capacity n_planes*floor(N_y/L) = {nx * y_delta} "
            f"< n_experts + 1 = {n_experts + 1}: cannot host a gateway plus all experts"
        )
    out = []
    for layer in range(1, n_layers + 1):
        y_lo = (layer - 1) * y_delta
        y_hi = layer * y_delta - 1
        nodes = tuple(
            GridCoord(x, y) for x in range(nx) for y in range(y_lo, y_hi + 1)
        )
        out.append(SubnetSpec(layer=layer, y_lo=y_lo, y_hi=y_hi, nodes=nodes))
    return out


def gateway_position(config: ConstellationConfig, n_layers: int, layer: int) -> GridCoord:
    """Central gateway of a layer's band: middle plane, middle row of the band."""
    if not 1 <= layer <= n_layers:
        raise ValueError(f"layer must lie in [1, {n_layers}], got {layer}")
    ny = config.sats_per_plane
    if ny < n_layers:
        raise FeasibilityError(
            f"sats_per_plane ({ny}) < n_layers ({n_layers}): ring partition infeasible"
        )
    y_delta = ny // n_layers
    x = config.n_planes // 2
    y = (layer - 1) * y_delta + (y_delta - 1) // 2
    return GridCoord(x, y)


@dataclass(frozen=True)
class PlacementPlan:
    """Gateways plus per-layer expert->satellite assignments.

    gateways[l-1] is layer l's gateway; assignments[l-1] maps expert index to
    a coordinate. strategy_tag records which policy produced the plan.
    """

    gateways: tuple[GridCoord, ...]
    assignments: tuple[Mapping[int, GridCoord], ...]
    strategy_tag: str
    seed: int | None = None

    def __post_init__(self) -> None:
        if len(self.gateways) != len(self.assignments):
            raise ValueError("one assignment map per gateway required")
        if not self.gateways:
            raise ValueError("plan needs at least one layer")

    @property
    def n_layers(self) -> int:
        return len(self.gateways)

    @property
    def n_experts(self) -> int:
        return len(self.assignments[0])

    def validate(
        self,
        subnets: Sequence[SubnetSpec] | None = None,
        max_experts_per_sat: int = 1,
    ) -> None:
        """Structural checks: expert sets, per-satellite capacity, gateway exclusion."""
        n_experts = self.n_experts
        for layer0, amap in enumerate(self.assignments):
            if sorted(amap) != list(range(n_experts)):
                raise ValueError(
                    f"layer {layer0 + 1} must assign experts 0..{n_experts - 1}, got {sorted(amap)}"
                )
            coords = list(amap.values())
            loads: dict[GridCoord, int] = {}
            for c in coords:
                loads[c] = loads.get(c, 0) + 1
            worst = max(loads.values())
            if worst > max_experts_per_sat:
                raise ValueError(
                    f"layer {layer0 + 1} stacks {worst} experts on one satellite "
                    f"(limit {max_experts_per_sat})"
                )
            if self.gateways[layer0] in coords:
                raise ValueError(f"layer {layer0 + 1} places an expert on its gateway")
            if subnets is not None:
                allowed = set(subnets[layer0].nodes)
                for e, c in amap.items():
                    if c not in allowed:
                        raise ValueError(
                            f"layer {layer0 + 1} expert {e} at {c} lies outside its subnet"
                        )


def optimal_expert_placement(
    probs: Sequence[float], latencies: ExpectedPathLatencies
) -> dict[int, GridCoord]:
    """Rank-matching placement: i-th most popular expert on the i-th fastest candidate.

    Ties in popularity break by expert index, ties in latency by node order.
    Candidates ranked past the number of experts stay empty.
    """
    n = len(probs)
    finite = int(np.sum(np.isfinite(latencies.values)))
    if finite < n:
        raise FeasibilityError(
            f"only {finite} reachable candidates for {n} experts in layer {latencies.layer}"
        )
    expert_order = sorted(range(n), key=lambda i: (-float(probs[i]), i))
    cand_order = sorted(
        range(len(latencies.candidates)),
        key=lambda s: (float(latencies.values[s]), latencies.candidates[s]),
    )
    return {
        expert_order[r]: latencies.candidates[cand_order[r]] for r in range(n)
    }


def exhaustive_layer_latency(
    model: ActivationModel, taus: Sequence[float], rank_to_expert: Sequence[int]
) -> float:
    """Expected slowest-active latency of a rank assignment, by subset enumeration.

    Direct sum over all C(I, K) activation sets of pmf * latency of the
    slowest member; the independent cross-check for the symmetric-polynomial
    route.
    """
    n = model.n_experts
    if sorted(rank_to_expert) != list(range(n)):
        raise ValueError(f"rank_to_expert must permute 0..{n - 1}")
    rank_of = {e: r for r, e in enumerate(rank_to_expert)}
    total = 0.0
    for subset in combinations(range(n), model.top_k):
        worst = max(rank_of[e] for e in subset)
        total += subset_pmf(model, subset) * float(taus[worst])
    return total


def brute_force_placement(
    model: ActivationModel, latencies: ExpectedPathLatencies
) -> tuple[dict[int, GridCoord], float]:
    """Exhaustive search over every expert->rank permutation (small I only).

    Ties between equal-objective permutations break in favor of the
    lexicographically smallest rank->expert tuple.
    """
    n = model.n_experts
    if n > 8:
        raise ValueError(f"brute force capped at 8 experts, got {n}")
    finite = int(np.sum(np.isfinite(latencies.values)))
    if finite < n:
        raise FeasibilityError(
            f"only {finite} reachable candidates for {n} experts in layer {latencies.layer}"
        )
    cand_order = sorted(
        range(len(latencies.candidates)),
        key=lambda s: (float(latencies.values[s]), latencies.candidates[s]),
    )[:n]
    taus = np.array([float(latencies.values[s]) for s in cand_order])

    perms = np.array(list(permutations(range(n))), dtype=np.int64)  # lex order
    rank_of = np.argsort(perms, axis=1)  # rank_of[p, e]
    objective = np.zeros(perms.shape[0])
    for subset in combinations(range(n), model.top_k):
        pmf = subset_pmf(model, subset)
        worst = rank_of[:, subset].max(axis=1)
        objective += pmf * taus[worst]
    best = int(np.argmin(objective))  # first hit = lexicographically smallest
    assignment = {
        int(perms[best, r]): latencies.candidates[cand_order[r]] for r in range(n)
    }
    return assignment, float(objective[best])


def _draw_coords(pool: Sequence[GridCoord], count: int, rng: np.random.Generator) -> list[GridCoord]:
    if count > len(pool):
        raise FeasibilityError(f"cannot draw {count} distinct satellites from {len(pool)}")
    idx = rng.choice(len(pool), size=count, replace=False)
    return [pool[int(i)] for i in idx]


def baseline_rand_place(
    config: ConstellationConfig, n_layers: int, n_experts: int, rng: np.random.Generator
) -> PlacementPlan:
    """Uniform placement over the whole constellation, ignoring subnets.

    Draws L gateways then L*I experts, all distinct.
    """
    pool = [
        GridCoord(x, y) for x in range(config.n_planes) for y in range(config.sats_per_plane)
    ]
    picks = _draw_coords(pool, n_layers * (n_experts + 1), rng)
    gateways = tuple(picks[:n_layers])
    assignments = []
    at = n_layers
    for _ in range(n_layers):
        assignments.append({e: picks[at + e] for e in range(n_experts)})
        at += n_experts
    return PlacementPlan(
        gateways=gateways, assignments=tuple(assignments), strategy_tag="rand_place"
    )


def baseline_rand_intra(
    subnets: Sequence[SubnetSpec], n_experts: int, rng: np.random.Generator
) -> PlacementPlan:
    """Per-subnet uniform placement: random gateway and experts inside each band."""
    gateways = []
    assignments = []
    for spec in subnets:
        picks = _draw_coords(spec.nodes, n_experts + 1, rng)
        gateways.append(picks[0])
        assignments.append({e: picks[1 + e] for e in range(n_experts)})
    return PlacementPlan(
        gateways=tuple(gateways), assignments=tuple(assignments), strategy_tag="rand_intra"
    )


def baseline_rand_intra_cg(
    config: ConstellationConfig,
    subnets: Sequence[SubnetSpec],
    n_experts: int,
    rng: np.random.Generator,
) -> PlacementPlan:
    """Central gateways with uniformly random experts inside each band."""
    gateways = []
    assignments = []
    for spec in subnets:
        gw = gateway_position(config, len(subnets), spec.layer)
        pool = [c for c in spec.nodes if c != gw]
        picks = _draw_coords(pool, n_experts, rng)
        gateways.append(gw)
        assignments.append({e: picks[e] for e in range(n_experts)})
    return PlacementPlan(
        gateways=tuple(gateways), assignments=tuple(assignments), strategy_tag="rand_intra_cg"
    )


PLAN_FORMAT_VERSION = 1


def write_plan(plan: PlacementPlan, path) -> None:
    """Serialize a plan to CSV (losslessly round-trips through read_plan)."""
    lines = [
        f"# plan-format: {PLAN_FORMAT_VERSION}",
        f"# strategy: {plan.strategy_tag}",
        f"# seed: {'none' if plan.seed is None else plan.seed}",
        "layer,role,expert,x,y",
    ]
    for layer0, gw in enumerate(plan.gateways):
        lines.append(f"{layer0 + 1},gateway,-1,{gw.x},{gw.y}")
        for e in sorted(plan.assignments[layer0]):
            c = plan.assignments[layer0][e]
            lines.append(f"{layer0 + 1},expert,{e},{c.x},{c.y}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_plan(path) -> PlacementPlan:
    """Parse a plan CSV written by write_plan."""
    strategy = "unknown"
    seed: int | None = None
    gateways: dict[int, GridCoord] = {}
    assignments: dict[int, dict[int, GridCoord]] = {}
    header_seen = False
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("strategy:"):
                    strategy = body.split(":", 1)[1].strip()
                elif body.startswith("seed:"):
                    val = body.split(":", 1)[1].strip()
                    seed = None if val == "none" else int(val)
                continue
            if not header_seen:
                if line != "layer,role,expert,x,y":
                    raise ValueError(
                        f"{path}:{lineno}: expected header 'layer,role,expert,x,y', got {line!r}"
                    )
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {line!r}")
            layer, role, expert = int(parts[0]), parts[1], int(parts[2])
            coord = GridCoord(int(parts[3]), int(parts[4]))
            if role == "gateway":
                if layer in gateways:
                    raise ValueError(f"{path}:{lineno}: duplicate gateway for layer {layer}")
                gateways[layer] = coord
            elif role == "expert":
                if expert in assignments.setdefault(layer, {}):
                    raise ValueError(
                        f"{path}:{lineno}: duplicate expert {expert} in layer {layer}"
                    )
                assignments[layer][expert] = coord
            else:
                raise ValueError(f"{path}:{lineno}: unknown role {role!r}")
    if not header_seen:
        raise ValueError(f"{path}: missing plan header")
    layers = sorted(gateways)
    if layers != list(range(1, len(layers) + 1)) or sorted(assignments) != layers:
        raise ValueError(f"{path}: layers must be contiguous from 1 with experts each")
    return PlacementPlan(
        gateways=tuple(gateways[l] for l in layers),
        assignments=tuple(assignments[l] for l in layers),
        strategy_tag=strategy,
        seed=seed,
    )
