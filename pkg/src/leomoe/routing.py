"""Hop latencies, shortest paths and expected gateway-to-expert path latencies.

A hop costs free-space propagation along the inter-satellite chord plus the
serialization time of one token embedding; every hop re-serializes the token.
Shortest paths run over each slot's realized link graph (scipy's Dijkstra
under the hood); expected path latencies average the gateway->candidate->next
gateway route over slots and link-survival draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _scipy_dijkstra

from .constellation import GridCoord, SPEED_OF_LIGHT_KM_S, central_angle
from .topology import TopologyModel, TopologyRealization, candidate_neighbors
from .streams import substream

DISCONNECT_POLICIES = ("skip", "penalty")


@dataclass(frozen=True)
class TokenParams:
    """Token embedding width and on-the-wire quantization."""

    embed_dim: int = 4096
    quant_bits: int = 16

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ValueError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.quant_bits < 1:
            raise ValueError(f"quant_bits must be >= 1, got {self.quant_bits}")

    @property
    def bits(self) -> int:
        return self.embed_dim * self.quant_bits


def transmission_latency(tok: TokenParams, rate_bps: float) -> float:
    """Serialization time of one token embedding at the given link rate."""
    if rate_bps <= 0:
        raise ValueError(f"rate_bps must be positive, got {rate_bps}")
    return tok.bits / rate_bps


def hop_latency(
    eph, params, tok: TokenParams, u: GridCoord, v: GridCoord, slot: int
) -> float:
    """One-hop latency between grid neighbors: chord propagation + serialization."""
    if v not in candidate_neighbors(u, eph.config):
        raise ValueError(f"{u} and {v} are not grid neighbors")
    theta = central_angle(eph, u, v, slot)
    r = eph.config.orbit_radius_km
    prop = 2.0 * r * np.sin(0.5 * theta) / SPEED_OF_LIGHT_KM_S
    return float(prop + transmission_latency(tok, params.isl_rate_bps))


def hop_cost_array(model: TopologyModel, tok: TokenParams, slot: int) -> np.ndarray:
    """Hop latencies for every candidate edge of the model in one slot."""
    return model.propagation_s(slot) + transmission_latency(tok, model.params.isl_rate_bps)


def _node_index(real_or_cfg, node) -> int:
    cfg = getattr(real_or_cfg, "config", real_or_cfg)
    if isinstance(node, GridCoord):
        if cfg is None:
            raise ValueError("GridCoord addressing needs a grid config")
        return cfg.coord_id(node)
    return int(node)


def _graph_csr(realization: TopologyRealization, edge_costs: np.ndarray) -> csr_matrix:
    if edge_costs.shape[0] != realization.n_edges:
        raise ValueError(
            f"got {edge_costs.shape[0]} costs for {realization.n_edges} edges"
        )
    if realization.n_edges and np.any(edge_costs <= 0):
        raise ValueError("hop costs must be positive")
    e = realization.edge_ids
    row = np.concatenate([e[:, 0], e[:, 1]])
    col = np.concatenate([e[:, 1], e[:, 0]])
    dat = np.concatenate([edge_costs, edge_costs])
    return csr_matrix((dat, (row, col)), shape=(realization.n_nodes, realization.n_nodes))


def shortest_paths(
    realization: TopologyRealization, edge_costs: np.ndarray, source
) -> tuple[np.ndarray, np.ndarray]:
    """Single-source distances and predecessors; unreachable nodes get inf / -1."""
    g = _graph_csr(realization, edge_costs)
    s = _node_index(realization, source)
    dist, pred = _scipy_dijkstra(
        g, directed=True, indices=[s], return_predecessors=True
    )
    pred = pred[0].astype(np.int64)
    pred[pred < 0] = -1
    return dist[0], pred


def distance_rows(
    realization: TopologyRealization, edge_costs: np.ndarray, sources: Sequence
) -> np.ndarray:
    """Distances from several sources at once, shape (len(sources), n_nodes)."""
    g = _graph_csr(realization, edge_costs)
    idx = [_node_index(realization, s) for s in sources]
    return _scipy_dijkstra(g, directed=True, indices=idx, return_predecessors=False)


@dataclass(frozen=True)
class DistanceMatrix:
    """All-pairs shortest-path latencies of one slot's realization."""

    slot: int
    entries: np.ndarray
    config: object = None

    def latency(self, u, v) -> float:
        return float(self.entries[_node_index(self, u), _node_index(self, v)])


def distance_matrix(realization: TopologyRealization, edge_costs: np.ndarray) -> DistanceMatrix:
    """All-pairs matrix. Symmetrized with the elementwise min of the transpose:
    the two sweep directions accumulate float sums in opposite order and may
    disagree in the last ulp on an undirected graph."""
    g = _graph_csr(realization, edge_costs)
    d = _scipy_dijkstra(g, directed=True, return_predecessors=False)
    d = np.minimum(d, d.T)
    return DistanceMatrix(slot=realization.slot, entries=d, config=realization.config)


def path_latency(dm: DistanceMatrix, gateways: tuple, s, compute_s: float) -> float:
    """Gateway -> expert-candidate -> next-gateway latency plus compute."""
    g_in, g_out = gateways
    return compute_s + dm.latency(g_in, s) + dm.latency(s, g_out)


@dataclass(frozen=True)
class ExpectedPathLatencies:
    """Per-candidate expected route latency for one subnet/layer.

    values[i] is the expectation for candidates[i]; finite_weight[i] is the
    share of (slot, survival draw) probability mass where the route existed.
    """

    layer: int
    gateway: GridCoord
    next_gateway: GridCoord
    candidates: tuple[GridCoord, ...]
    values: np.ndarray
    finite_weight: np.ndarray
    n_slots: int
    n_survival_samples: int

    def value_of(self, coord: GridCoord) -> float:
        return float(self.values[self.candidates.index(coord)])


def _slot_weights(model: TopologyModel, alpha: np.ndarray | None) -> np.ndarray:
    nt = model.config.n_slots
    if alpha is None:
        return np.full(nt, 1.0 / nt)
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (nt,) or np.any(alpha < 0) or not np.isclose(alpha.sum(), 1.0):
        raise ValueError("alpha must be a length-n_slots probability vector")
    return alpha


def expected_path_latencies_bulk(
    model: TopologyModel,
    tok: TokenParams,
    layer_candidates: Sequence[Sequence[GridCoord]],
    gateways: Sequence[GridCoord],
    compute_s: float,
    n_survival_samples: int = 100,
    seed: int = 0,
    alpha: np.ndarray | None = None,
    include_survival: bool = True,
    disconnect_policy: str = "skip",
    penalty_s: float = 1.0,
) -> list[ExpectedPathLatencies]:
    """Expected path latencies for all layers over one shared set of topology draws.

    Layer l (1-based) routes from gateways[l-1] through a candidate to
    gateways[l % L]. Survival draws come from substream(seed, "pathlat", slot, j),
    so two calls with the same seed see identical topologies regardless of how
    many layers or candidates they evaluate. The expectation averages over
    slots (weights alpha, uniform by default) and, when include_survival is
    set, over n_survival_samples Bernoulli survival draws per slot; with the
    "skip" policy disconnected draws are dropped and the remaining mass
    renormalized, with "penalty" they contribute penalty_s.
    """
    if disconnect_policy not in DISCONNECT_POLICIES:
        raise ValueError(f"disconnect_policy must be one of {DISCONNECT_POLICIES}")
    if include_survival and n_survival_samples < 1:
        raise ValueError(f"n_survival_samples must be >= 1, got {n_survival_samples}")
    cfg = model.config
    n_layers = len(gateways)
    if len(layer_candidates) != n_layers:
        raise ValueError("one candidate list per gateway required")
    w_slot = _slot_weights(model, alpha)

    gw_ids = [cfg.coord_id(g) for g in gateways]
    source_ids = sorted(set(gw_ids))
    src_row = {nid: k for k, nid in enumerate(source_ids)}
    cand_ids = [np.array([cfg.coord_id(c) for c in cands], dtype=np.int64)
                for cands in layer_candidates]
    for layer0, cands in enumerate(layer_candidates):
        if gateways[layer0] in cands:
            raise ValueError(f"layer {layer0 + 1} candidates include the gateway")

    acc = [np.zeros(len(c)) for c in cand_ids]
    mass = [np.zeros(len(c)) for c in cand_ids]
    n_draws = n_survival_samples if include_survival else 1

    for slot in range(cfg.n_slots):
        costs = hop_cost_array(model, tok, slot)
        w = w_slot[slot] / n_draws
        if w == 0.0:
            continue
        for j in range(n_draws):
            if include_survival:
                rng = substream(seed, "pathlat", slot, j)
                real = model.realization(slot, rng=rng)
            else:
                idx = np.where(model.det_mask[slot])[0]
                real = TopologyRealization(
                    n_nodes=cfg.n_sats, slot=slot, edge_ids=model.cand[idx],
                    cand_idx=idx, config=cfg,
                )
            rows = distance_rows(real, costs[real.cand_idx], source_ids)
            for layer0 in range(n_layers):
                d_in = rows[src_row[gw_ids[layer0]], cand_ids[layer0]]
                d_out = rows[src_row[gw_ids[(layer0 + 1) % n_layers]], cand_ids[layer0]]
                tau = compute_s + d_in + d_out
                finite = np.isfinite(tau)
                if disconnect_policy == "penalty":
                    tau = np.where(finite, tau, compute_s + penalty_s)
                    acc[layer0] += w * tau
                    mass[layer0] += w
                else:
                    acc[layer0][finite] += w * tau[finite]
                    mass[layer0][finite] += w
    out = []
    for layer0 in range(n_layers):
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(mass[layer0] > 0, acc[layer0] / np.maximum(mass[layer0], 1e-300), np.inf)
        out.append(
            ExpectedPathLatencies(
                layer=layer0 + 1,
                gateway=gateways[layer0],
                next_gateway=gateways[(layer0 + 1) % n_layers],
                candidates=tuple(layer_candidates[layer0]),
                values=vals,
                finite_weight=mass[layer0],
                n_slots=cfg.n_slots,
                n_survival_samples=n_draws,
            )
        )
    return out


def expected_path_latencies(
    model: TopologyModel,
    tok: TokenParams,
    candidates: Sequence[GridCoord],
    gateway: GridCoord,
    next_gateway: GridCoord,
    compute_s: float,
    n_survival_samples: int = 100,
    seed: int = 0,
    layer: int = 1,
    alpha: np.ndarray | None = None,
    include_survival: bool = True,
    disconnect_policy: str = "skip",
    penalty_s: float = 1.0,
) -> ExpectedPathLatencies:
    """Single-layer form of expected_path_latencies_bulk (same draws per seed).

    The gateway pair is honored verbatim (no wraparound cycle), which is what
    the exhaustive small-graph oracles exercise.
    """
    if disconnect_policy not in DISCONNECT_POLICIES:
        raise ValueError(f"disconnect_policy must be one of {DISCONNECT_POLICIES}")
    if include_survival and n_survival_samples < 1:
        raise ValueError(f"n_survival_samples must be >= 1, got {n_survival_samples}")
    cfg = model.config
    w_slot = _slot_weights(model, alpha)
    cand_ids = np.array([cfg.coord_id(c) for c in candidates], dtype=np.int64)
    if gateway in candidates:
        raise ValueError("candidates include the gateway")
    sources = [gateway] if gateway == next_gateway else [gateway, next_gateway]
    acc = np.zeros(len(candidates))
    mass = np.zeros(len(candidates))
    n_draws = n_survival_samples if include_survival else 1
    for slot in range(cfg.n_slots):
        costs = hop_cost_array(model, tok, slot)
        w = w_slot[slot] / n_draws
        if w == 0.0:
            continue
        for j in range(n_draws):
            if include_survival:
                real = model.realization(slot, rng=substream(seed, "pathlat", slot, j))
            else:
                idx = np.where(model.det_mask[slot])[0]
                real = TopologyRealization(
                    n_nodes=cfg.n_sats, slot=slot, edge_ids=model.cand[idx],
                    cand_idx=idx, config=cfg,
                )
            rows = distance_rows(real, costs[real.cand_idx], sources)
            d_in = rows[0, cand_ids]
            d_out = rows[-1, cand_ids]
            tau = compute_s + d_in + d_out
            finite = np.isfinite(tau)
            if disconnect_policy == "penalty":
                tau = np.where(finite, tau, compute_s + penalty_s)
                acc += w * tau
                mass += w
            else:
                acc[finite] += w * tau[finite]
                mass[finite] += w
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(mass > 0, acc / np.maximum(mass, 1e-300), np.inf)
    return ExpectedPathLatencies(
        layer=layer,
        gateway=gateway,
        next_gateway=next_gateway,
        candidates=tuple(candidates),
        values=vals,
        finite_weight=mass,
        n_slots=cfg.n_slots,
        n_survival_samples=n_draws,
    )
