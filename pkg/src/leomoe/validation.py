"""Self-check batteries over randomized instances.

Each battery draws seeded random instances and checks an identity the rest of
the package relies on, pitting the production route against an independent
enumeration or relaxation oracle. The CLI `validate` subcommand runs all of
them; the test suite reuses them at full size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .activation import (
    ActivationModel,
    activation_probs,
    layer_comp_latency,
    ranked_weights,
    sample_topk,
    slowest_rank_cdf,
    subset_pmf,
)
from .constellation import GridCoord
from .placement import brute_force_placement, exhaustive_layer_latency, optimal_expert_placement
from .routing import ExpectedPathLatencies, distance_matrix
from .streams import substream
from .topology import TopologyRealization

LEVELS = ("small", "full")


@dataclass
class BatteryResult:
    name: str
    n_instances: int
    n_failures: int = 0
    details: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_failures == 0

    def fail(self, msg: str) -> None:
        self.n_failures += 1
        if len(self.details) < 10:
            self.details.append(msg)


def _sizes(level: str) -> dict[str, int]:
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
    if level == "small":
        return {"pmf": 25, "layer_identity": 50, "rank_cdf": 50, "placement": 25, "exchange": 10, "routing": 12}
    return {"pmf": 100, "layer_identity": 200, "rank_cdf": 200, "placement": 100, "exchange": 25, "routing": 100}


def _random_model(rng: np.random.Generator, max_i: int = 8, extreme: bool = False) -> ActivationModel:
    n = int(rng.integers(2, max_i + 1))
    k = int(rng.integers(1, n + 1))
    if extreme:
        logw = rng.uniform(-9.0, 9.0, size=n)
        logw[int(rng.integers(n))] = 9.5  # force a > 1e6 spread
        logw[int(rng.integers(n))] = -9.5
        w = np.exp(logw)
    else:
        w = rng.uniform(0.05, 5.0, size=n)
    return ActivationModel(weights=tuple(float(x) for x in w), top_k=k)


def battery_pmf(n_instances: int, seed: int = 1001) -> BatteryResult:
    """Set-PMF normalization, marginal sum, monotonicity and sampler frequencies."""
    res = BatteryResult(name="ppswor-pmf", n_instances=n_instances)
    rng = substream(seed, "validate", "pmf")
    for inst in range(n_instances):
        model = _random_model(rng, extreme=(inst % 5 == 4))
        subsets = list(combinations(range(model.n_experts), model.top_k))
        pmf = np.array([subset_pmf(model, s) for s in subsets])
        if abs(pmf.sum() - 1.0) > 1e-12:
            res.fail(f"inst {inst}: pmf sums to {pmf.sum():.17g}")
        probs = activation_probs(model)
        if abs(probs.sum() - model.top_k) > 1e-12:
            res.fail(f"inst {inst}: marginals sum to {probs.sum():.17g} != K")
        if np.any(probs <= 0) or np.any(probs > 1.0 + 1e-15):
            res.fail(f"inst {inst}: marginal outside (0, 1]")
        for i in range(model.n_experts):
            for j in range(model.n_experts):
                if model.weights[i] > model.weights[j] and probs[i] < probs[j] - 1e-12:
                    res.fail(f"inst {inst}: marginals not monotone in weights")
        if inst % 10 == 0 and model.n_experts <= 6:
            # frequency spot check at 4 sigma, exact sampler
            n_draws = 20000
            counts: dict[frozenset, int] = {}
            srng = substream(seed, "validate", "pmf-draws", inst)
            for _ in range(n_draws):
                s = sample_topk(model, srng, method="exact")
                counts[s] = counts.get(s, 0) + 1
            for s_idx, subset in enumerate(subsets):
                p = pmf[s_idx]
                got = counts.get(frozenset(subset), 0)
                sigma = np.sqrt(n_draws * p * (1.0 - p))
                if abs(got - n_draws * p) > 4.0 * sigma + 1.0:
                    res.fail(
                        f"inst {inst}: subset {subset} freq {got}/{n_draws} vs p={p:.4f}"
                    )
    return res


def _rank_pmf_by_enumeration(model: ActivationModel, rank_to_expert: Sequence[int]) -> np.ndarray:
    """Pr[slowest activated rank = s] via direct subset enumeration (oracle)."""
    n = model.n_experts
    rank_of = {e: r for r, e in enumerate(rank_to_expert)}
    out = np.zeros(n)
    for subset in combinations(range(n), model.top_k):
        worst = max(rank_of[e] for e in subset)
        out[worst] += subset_pmf(model, subset)
    return out


def battery_layer_identity(n_instances: int, seed: int = 1002) -> BatteryResult:
    """Telescoped layer latency equals the direct slowest-rank enumeration."""
    res = BatteryResult(name="layer-latency-identity", n_instances=n_instances)
    rng = substream(seed, "validate", "layer-identity")
    for inst in range(n_instances):
        model = _random_model(rng, max_i=7, extreme=(inst % 7 == 6))
        n = model.n_experts
        perm = list(rng.permutation(n))
        taus = np.sort(rng.uniform(0.0, 2.0, size=n))
        ranked = ranked_weights(model.weights, perm)
        got = layer_comp_latency(ranked, model.top_k, taus)
        want = float(_rank_pmf_by_enumeration(model, perm) @ taus)
        if abs(got - want) > 1e-12 * max(1.0, abs(want)):
            res.fail(f"inst {inst}: telescoped {got:.17g} vs enumerated {want:.17g}")
    return res


def battery_rank_cdf(n_instances: int, seed: int = 1003) -> BatteryResult:
    """Slowest-rank CDF equals enumeration, is monotone and hits its bounds."""
    res = BatteryResult(name="slowest-rank-cdf", n_instances=n_instances)
    rng = substream(seed, "validate", "rank-cdf")
    for inst in range(n_instances):
        model = _random_model(rng, max_i=7, extreme=(inst % 7 == 6))
        n = model.n_experts
        k = model.top_k
        perm = list(rng.permutation(n))
        ranked = ranked_weights(model.weights, perm)
        rank_pmf = _rank_pmf_by_enumeration(model, perm)
        prev = -1.0
        for s in range(1, n + 2):
            got = slowest_rank_cdf(ranked, k, s)
            want = float(rank_pmf[: s - 1].sum())
            if abs(got - want) > 1e-12:
                res.fail(f"inst {inst}: CDF(s={s}) {got:.17g} vs enumerated {want:.17g}")
            if got < prev - 1e-15:
                res.fail(f"inst {inst}: CDF not monotone at s={s}")
            prev = got
        if slowest_rank_cdf(ranked, k, k) != 0.0:
            res.fail(f"inst {inst}: CDF(s=K) != 0")
        if slowest_rank_cdf(ranked, k, n + 1) != 1.0:
            res.fail(f"inst {inst}: CDF(s=I+1) != 1")
    return res


def _toy_latencies(rng: np.random.Generator, n_candidates: int) -> ExpectedPathLatencies:
    coords = tuple(GridCoord(0, y) for y in range(1, n_candidates + 1))
    vals = np.sort(rng.uniform(0.01, 1.0, size=n_candidates))
    # distinct with probability 1; shuffle candidate order to exercise sorting
    order = rng.permutation(n_candidates)
    return ExpectedPathLatencies(
        layer=1,
        gateway=GridCoord(0, 0),
        next_gateway=GridCoord(0, 0),
        candidates=tuple(coords[i] for i in order),
        values=vals[order],
        finite_weight=np.ones(n_candidates),
        n_slots=1,
        n_survival_samples=1,
    )


def battery_placement(
    n_instances: int,
    n_exchange: int,
    seed: int = 1004,
    placement_fn: Callable = optimal_expert_placement,
) -> BatteryResult:
    """Rank-matching placement ties the brute-force optimum; adjacent swaps never win."""
    res = BatteryResult(name="placement-optimality", n_instances=n_instances + n_exchange)
    rng = substream(seed, "validate", "placement")
    for inst in range(n_instances):
        n = int(rng.integers(2, 7))
        k = int(rng.integers(1, n + 1))
        model = ActivationModel(
            weights=tuple(float(w) for w in rng.uniform(0.05, 5.0, size=n)), top_k=k
        )
        lat = _toy_latencies(rng, n_candidates=n + int(rng.integers(0, 3)))
        assignment = placement_fn(activation_probs(model), lat)
        # objective of the returned assignment, via the enumeration oracle
        cand_order = sorted(
            range(len(lat.candidates)), key=lambda s: (float(lat.values[s]), lat.candidates[s])
        )
        coord_rank = {lat.candidates[c]: r for r, c in enumerate(cand_order)}
        rank_to_expert = [-1] * n
        try:
            for e, coord in assignment.items():
                rank_to_expert[coord_rank[coord]] = e
        except (KeyError, IndexError):
            res.fail(f"inst {inst}: assignment uses candidates beyond the first {n} ranks")
            continue
        if sorted(rank_to_expert) != list(range(n)):
            res.fail(f"inst {inst}: assignment is not a bijection onto the top ranks")
            continue
        taus = [float(lat.values[cand_order[r]]) for r in range(n)]
        got = exhaustive_layer_latency(model, taus, rank_to_expert)
        _, best = brute_force_placement(model, lat)
        if got > best + 1e-12 * max(1.0, abs(best)):
            res.fail(f"inst {inst}: placement objective {got:.17g} vs brute force {best:.17g}")
    rng2 = substream(seed, "validate", "exchange")
    for inst in range(n_exchange):
        n = int(rng2.integers(2, 7))
        k = int(rng2.integers(1, n + 1))
        model = ActivationModel(
            weights=tuple(float(w) for w in rng2.uniform(0.05, 5.0, size=n)), top_k=k
        )
        taus = np.sort(rng2.uniform(0.01, 1.0, size=n))
        probs = activation_probs(model)
        sorted_perm = sorted(range(n), key=lambda i: (-probs[i], i))
        base = exhaustive_layer_latency(model, taus, sorted_perm)
        for r in range(n - 1):
            swapped = list(sorted_perm)
            swapped[r], swapped[r + 1] = swapped[r + 1], swapped[r]
            alt = exhaustive_layer_latency(model, taus, swapped)
            if alt < base - 1e-12 * max(1.0, abs(base)):
                res.fail(f"exchange inst {inst}: adjacent swap at rank {r} improved the objective")
    return res


def relaxation_distance_matrix(
    n_nodes: int, edge_ids: np.ndarray, costs: np.ndarray
) -> np.ndarray:
    """All-pairs shortest paths by per-source iterated edge relaxation.

    Pure-Python Bellman-Ford sweeps to a fixpoint. Path sums accumulate
    left-to-right from the source exactly as Dijkstra's relaxations do, so on
    non-negative costs the result matches bit for bit.
    """
    edges = [(int(u), int(v), float(c)) for (u, v), c in zip(edge_ids, costs)]
    out = np.full((n_nodes, n_nodes), np.inf)
    for src in range(n_nodes):
        d = [np.inf] * n_nodes
        d[src] = 0.0
        changed = True
        while changed:
            changed = False
            for u, v, c in edges:
                alt = d[u] + c
                if alt < d[v]:
                    d[v] = alt
                    changed = True
                alt = d[v] + c
                if alt < d[u]:
                    d[u] = alt
                    changed = True
        out[src] = d
    return out


def _random_realization(rng: np.random.Generator) -> tuple[TopologyRealization, np.ndarray]:
    n = int(rng.integers(6, 26))
    density = rng.uniform(0.15, 0.5)
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < density]
    if not pairs:
        pairs = [(0, 1 % n)]
    edge_ids = np.array(pairs, dtype=np.int64)
    costs = rng.uniform(0.01, 2.0, size=len(pairs))
    real = TopologyRealization(n_nodes=n, slot=0, edge_ids=edge_ids)
    return real, costs


def battery_routing(n_instances: int, seed: int = 1005) -> BatteryResult:
    """scipy-backed distance matrices match the relaxation oracle exactly."""
    res = BatteryResult(name="shortest-path-oracle", n_instances=n_instances)
    rng = substream(seed, "validate", "routing")
    for inst in range(n_instances):
        real, costs = _random_realization(rng)
        dm = distance_matrix(real, costs)
        oracle = relaxation_distance_matrix(real.n_nodes, real.edge_ids, costs)
        oracle = np.minimum(oracle, oracle.T)  # same symmetrization as distance_matrix
        if not np.array_equal(dm.entries, oracle):
            bad = int(np.sum(dm.entries != oracle))
            res.fail(f"inst {inst}: {bad} entries differ from the relaxation oracle")
        if np.any(np.diag(dm.entries) != 0.0):
            res.fail(f"inst {inst}: nonzero diagonal")
        if not np.array_equal(dm.entries, dm.entries.T):
            res.fail(f"inst {inst}: asymmetric matrix")
    return res


def run_batteries(
    level: str = "small",
    placement_fn: Callable = optimal_expert_placement,
) -> list[BatteryResult]:
    """All batteries at the given size; results carry failure details."""
    sizes = _sizes(level)
    return [
        battery_pmf(sizes["pmf"]),
        battery_layer_identity(sizes["layer_identity"]),
        battery_rank_cdf(sizes["rank_cdf"]),
        battery_placement(sizes["placement"], sizes["exchange"], placement_fn=placement_fn),
        battery_routing(sizes["routing"]),
    ]
