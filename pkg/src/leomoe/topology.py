"""Slot-by-slot ISL topology: grid candidates, feasibility, survival sampling.

Each satellite has up to four candidate laser links: two in-plane ring
neighbors and two cross-plane neighbors. A candidate is deterministically
feasible in a slot when its line-of-sight slew rate is within the tracking
threshold and the seam policy permits it; a feasible link then survives the
slot with an independent Bernoulli draw.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .constellation import (
    ConstellationConfig,
    Ephemeris,
    GridCoord,
    SPEED_OF_LIGHT_KM_S,
    los_angular_rates,
)
from .streams import substream

SEAM_POLICIES = ("angular-rate-test", "hard-disable")


@dataclass(frozen=True)
class LinkParams:
    """ISL feasibility and link-budget parameters.

    survival_prob applies uniformly; per-edge overrides go through
    TopologyModel(survival_overrides=...).
    """

    rate_threshold_rad_s: float = 0.12
    survival_prob: float = 0.95
    isl_rate_bps: float = 100e9
    seam_policy: str = "angular-rate-test"

    def __post_init__(self) -> None:
        if self.rate_threshold_rad_s <= 0:
            raise ValueError(f"rate_threshold_rad_s must be positive, got {self.rate_threshold_rad_s}")
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ValueError(f"survival_prob must lie in [0, 1], got {self.survival_prob}")
        if self.isl_rate_bps <= 0:
            raise ValueError(f"isl_rate_bps must be positive, got {self.isl_rate_bps}")
        if self.seam_policy not in SEAM_POLICIES:
            raise ValueError(f"seam_policy must be one of {SEAM_POLICIES}, got {self.seam_policy!r}")


def candidate_neighbors(coord: GridCoord, config: ConstellationConfig) -> set[GridCoord]:
    """Grid neighbors that could carry an ISL (seam pairs included)."""
    config.coord_id(coord)  # bounds check
    nx, ny = config.n_planes, config.sats_per_plane
    out: set[GridCoord] = set()
    if ny >= 2:
        out.add(GridCoord(coord.x, (coord.y + 1) % ny))
        out.add(GridCoord(coord.x, (coord.y - 1) % ny))
    if nx >= 2:
        out.add(GridCoord((coord.x + 1) % nx, coord.y))
        out.add(GridCoord((coord.x - 1) % nx, coord.y))
    out.discard(coord)
    return out


def candidate_edges(config: ConstellationConfig) -> np.ndarray:
    """Canonical candidate edge list as an (m, 2) array of node ids, u < v, sorted."""
    ny = config.sats_per_plane
    pairs = set()
    for x in range(config.n_planes):
        for y in range(ny):
            c = GridCoord(x, y)
            cid = config.coord_id(c)
            for nb in candidate_neighbors(c, config):
                nid = config.coord_id(nb)
                pairs.add((min(cid, nid), max(cid, nid)))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def is_seam_pair(config: ConstellationConfig, u: GridCoord, v: GridCoord) -> bool:
    """True for the x-wrap plane pair (the counter-rotating seam under a star spread)."""
    return config.n_planes >= 2 and abs(u.x - v.x) == config.n_planes - 1 and u.x != v.x


def deterministic_feasible(
    eph: Ephemeris, params: LinkParams, u: GridCoord, v: GridCoord, slot: int
) -> bool:
    """Slew-rate + seam-policy feasibility of one candidate edge in one slot."""
    cfg = eph.config
    if v not in candidate_neighbors(u, cfg):
        raise ValueError(f"{u} and {v} are not grid neighbors")
    if params.seam_policy == "hard-disable" and is_seam_pair(cfg, u, v):
        return False
    uid = np.array([cfg.coord_id(u)])
    vid = np.array([cfg.coord_id(v)])
    rate = float(los_angular_rates(eph, uid, vid, slot)[0])
    return rate <= params.rate_threshold_rad_s


@dataclass(frozen=True)
class TopologyRealization:
    """One slot's sampled link graph.

    edge_ids rows are (u_id, v_id) with u_id < v_id; cand_idx gives each
    edge's row in the model's candidate table (None for hand-built graphs).
    """

    n_nodes: int
    slot: int
    edge_ids: np.ndarray
    cand_idx: np.ndarray | None = None
    config: ConstellationConfig | None = None

    @property
    def n_edges(self) -> int:
        return int(self.edge_ids.shape[0])

    def edge_pairs(self) -> set[tuple[GridCoord, GridCoord]]:
        """Edges as unordered coordinate pairs (requires a grid config)."""
        if self.config is None:
            raise ValueError("realization has no grid config attached")
        out = set()
        for uid, vid in self.edge_ids:
            cu, cv = self.config.coord_of(int(uid)), self.config.coord_of(int(vid))
            out.add((cu, cv) if cu < cv else (cv, cu))
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        np.add.at(deg, self.edge_ids[:, 0], 1)
        np.add.at(deg, self.edge_ids[:, 1], 1)
        return deg


class TopologyModel:
    """Precomputed per-slot feasibility and geometry over the candidate edges.

    Holds, for every slot, the slew rates, the deterministic feasibility mask
    and the inter-satellite chord lengths of the canonical candidate edge
    list. Survival sampling draws one uniform per candidate edge in canonical
    order, so realizations sampled from a shared stream are coupled: raising
    survival_prob or the rate threshold can only add edges.
    """

    def __init__(
        self,
        eph: Ephemeris,
        params: LinkParams,
        survival_overrides: Mapping[tuple[GridCoord, GridCoord], float] | None = None,
    ) -> None:
        self.eph = eph
        self.params = params
        cfg = eph.config
        self.config = cfg
        self.cand = candidate_edges(cfg)
        m = self.cand.shape[0]

        xs_u = self.cand[:, 0] // cfg.sats_per_plane
        xs_v = self.cand[:, 1] // cfg.sats_per_plane
        self.seam_mask = (xs_u != xs_v) & (np.abs(xs_u - xs_v) == cfg.n_planes - 1)

        self.rates = np.empty((cfg.n_slots, m))
        self.chord_km = np.empty((cfg.n_slots, m))
        for n in range(cfg.n_slots):
            self.rates[n] = los_angular_rates(eph, self.cand[:, 0], self.cand[:, 1], n)
            rel = eph.positions[n, self.cand[:, 1]] - eph.positions[n, self.cand[:, 0]]
            self.chord_km[n] = np.linalg.norm(rel, axis=-1)

        self.det_mask = self.rates <= params.rate_threshold_rad_s
        if params.seam_policy == "hard-disable":
            self.det_mask &= ~self.seam_mask[None, :]

        self.survival = np.full(m, params.survival_prob)
        if survival_overrides:
            for (u, v), p in survival_overrides.items():
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"survival override for ({u},{v}) outside [0, 1]: {p}")
                uid, vid = cfg.coord_id(u), cfg.coord_id(v)
                key = (min(uid, vid), max(uid, vid))
                rows = np.where((self.cand[:, 0] == key[0]) & (self.cand[:, 1] == key[1]))[0]
                if rows.size == 0:
                    raise ValueError(f"survival override for non-candidate pair ({u},{v})")
                self.survival[rows[0]] = p

    @property
    def n_candidates(self) -> int:
        return int(self.cand.shape[0])

    def propagation_s(self, slot: int) -> np.ndarray:
        """Per-candidate free-space propagation latency in seconds."""
        return self.chord_km[slot] / SPEED_OF_LIGHT_KM_S

    def realization(
        self, slot: int, rng: np.random.Generator | None = None, uniforms: np.ndarray | None = None
    ) -> TopologyRealization:
        """Sample one slot's realization; pass uniforms to reuse coupled draws."""
        if uniforms is None:
            if rng is None:
                raise ValueError("need an rng or a uniform vector")
            uniforms = rng.random(self.n_candidates)
        keep = self.det_mask[slot] & (uniforms < self.survival)
        idx = np.where(keep)[0]
        return TopologyRealization(
            n_nodes=self.config.n_sats,
            slot=slot,
            edge_ids=self.cand[idx],
            cand_idx=idx,
            config=self.config,
        )

    def sequence(self, seed: int) -> Iterator[TopologyRealization]:
        """One realization per slot, each from its own substream of seed."""
        for slot in range(self.config.n_slots):
            yield self.realization(slot, rng=substream(seed, "survival", slot))


def sample_realization(
    eph: Ephemeris, params: LinkParams, slot: int, rng: np.random.Generator
) -> TopologyRealization:
    """Standalone single-slot sampler; matches TopologyModel.realization draws."""
    cfg = eph.config
    cand = candidate_edges(cfg)
    rates = los_angular_rates(eph, cand[:, 0], cand[:, 1], slot)
    mask = rates <= params.rate_threshold_rad_s
    if params.seam_policy == "hard-disable":
        xs_u = cand[:, 0] // cfg.sats_per_plane
        xs_v = cand[:, 1] // cfg.sats_per_plane
        mask &= ~((xs_u != xs_v) & (np.abs(xs_u - xs_v) == cfg.n_planes - 1))
    uniforms = rng.random(cand.shape[0])
    keep = mask & (uniforms < params.survival_prob)
    idx = np.where(keep)[0]
    return TopologyRealization(
        n_nodes=cfg.n_sats, slot=slot, edge_ids=cand[idx], cand_idx=idx, config=cfg
    )


def realization_sequence(
    eph: Ephemeris, params: LinkParams, seed: int
) -> Iterator[TopologyRealization]:
    """Seeded per-slot realizations; slot k is invariant to the other slots' draws."""
    for slot in range(eph.config.n_slots):
        yield sample_realization(eph, params, slot, substream(seed, "survival", slot))
