"""Polar LEO constellation grid and circular-orbit ephemeris.

Satellites are addressed on an (orbit plane, in-plane index) grid. Orbits are
circular two-body Keplerian in an Earth-centered inertial frame; Earth rotation
is ignored because only inter-satellite geometry feeds the link model.

The y dimension (in-plane) is a ring. The x dimension (across planes) is a
path for a "star" spread, where ascending nodes cover half the equator and the
first and last planes fly counter-rotating along a seam, or a ring for a
"delta" spread covering the full equator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MU_EARTH_KM3_S2 = 398600.4418
DEFAULT_EARTH_RADIUS_KM = 6371.0
SPEED_OF_LIGHT_KM_S = 299792.458

# Below this separation two satellites count as coincident (no defined line of
# sight). Position arithmetic carries ~radius*eps ~ 1e-12 km of float noise, so
# an exact-zero test would miss genuinely colliding constellations.
COINCIDENT_SEPARATION_KM = 1e-9

PLANE_SPREADS = ("star", "delta")


@dataclass(frozen=True, order=True)
class GridCoord:
    """Grid identity of one satellite: plane index x, in-plane index y."""

    x: int
    y: int

    def __repr__(self) -> str:
        return f"({self.x},{self.y})"


@dataclass(frozen=True)
class ConstellationConfig:
    """Static constellation description plus the simulated time grid.

    phasing is the inter-plane phase factor: a satellite in plane x leads its
    same-index neighbor in plane 0 by 2*pi*phasing*x / (n_planes*sats_per_plane)
    radians of anomaly.
    """

    n_planes: int
    sats_per_plane: int
    altitude_km: float = 550.0
    inclination_deg: float = 87.0
    phasing: int = 0
    earth_radius_km: float = DEFAULT_EARTH_RADIUS_KM
    n_slots: int = 1
    slot_duration_s: float = 10.0
    plane_spread: str = "star"

    def __post_init__(self) -> None:
        if self.n_planes < 1:
            raise ValueError(f"n_planes must be >= 1, got {self.n_planes}")
        if self.sats_per_plane < 1:
            raise ValueError(f"sats_per_plane must be >= 1, got {self.sats_per_plane}")
        if self.altitude_km <= 0:
            raise ValueError(f"altitude_km must be positive, got {self.altitude_km}")
        if self.earth_radius_km <= 0:
            raise ValueError(f"earth_radius_km must be positive, got {self.earth_radius_km}")
        if not 0.0 <= self.inclination_deg <= 180.0:
            raise ValueError(f"inclination_deg must lie in [0, 180], got {self.inclination_deg}")
        if not 0 <= self.phasing < self.n_planes:
            raise ValueError(
                f"phasing must lie in [0, n_planes), got {self.phasing} with n_planes={self.n_planes}"
            )
        if self.n_slots < 1:
            raise ValueError(f"n_slots must be >= 1, got {self.n_slots}")
        if self.slot_duration_s <= 0:
            raise ValueError(f"slot_duration_s must be positive, got {self.slot_duration_s}")
        if self.plane_spread not in PLANE_SPREADS:
            raise ValueError(f"plane_spread must be one of {PLANE_SPREADS}, got {self.plane_spread!r}")

    @property
    def n_sats(self) -> int:
        return self.n_planes * self.sats_per_plane

    @property
    def orbit_radius_km(self) -> float:
        return self.altitude_km + self.earth_radius_km

    @property
    def orbital_rate_rad_s(self) -> float:
        """Mean motion sqrt(mu / a^3) of the circular orbit."""
        a = self.orbit_radius_km
        return float(np.sqrt(MU_EARTH_KM3_S2 / a**3))

    @property
    def orbital_period_s(self) -> float:
        return 2.0 * np.pi / self.orbital_rate_rad_s

    def coord_id(self, coord: GridCoord) -> int:
        """Flat node id x * sats_per_plane + y."""
        if not (0 <= coord.x < self.n_planes and 0 <= coord.y < self.sats_per_plane):
            raise ValueError(f"coordinate {coord} outside {self.n_planes}x{self.sats_per_plane} grid")
        return coord.x * self.sats_per_plane + coord.y

    def coord_of(self, node_id: int) -> GridCoord:
        if not 0 <= node_id < self.n_sats:
            raise ValueError(f"node id {node_id} outside [0, {self.n_sats})")
        return GridCoord(node_id // self.sats_per_plane, node_id % self.sats_per_plane)

    def raan_rad(self, x: int) -> float:
        """Right ascension of the ascending node of plane x."""
        span = np.pi if self.plane_spread == "star" else 2.0 * np.pi
        return float(span * x / self.n_planes)


def build_grid(config: ConstellationConfig) -> list[GridCoord]:
    """All grid coordinates in flat-id order."""
    return [
        GridCoord(x, y) for x in range(config.n_planes) for y in range(config.sats_per_plane)
    ]


@dataclass(frozen=True)
class Ephemeris:
    """Per-slot inertial positions (km) for every satellite.

    positions has shape (n_slots, n_sats, 3), indexed by flat node id.
    plane_normals holds the constant unit orbit normal of each plane.
    """

    config: ConstellationConfig
    positions: np.ndarray
    plane_normals: np.ndarray

    def position(self, slot: int, coord: GridCoord) -> np.ndarray:
        self._check_slot(slot)
        return self.positions[slot, self.config.coord_id(coord)]

    def _check_slot(self, slot: int) -> None:
        if not 0 <= slot < self.config.n_slots:
            raise ValueError(f"slot {slot} outside [0, {self.config.n_slots})")


def propagate(config: ConstellationConfig) -> Ephemeris:
    """Propagate the full constellation over the configured time grid."""
    nx, ny = config.n_planes, config.sats_per_plane
    ids = np.arange(config.n_sats)
    px = ids // ny
    py = ids % ny

    span = np.pi if config.plane_spread == "star" else 2.0 * np.pi
    raan = span * px / nx
    inc = np.deg2rad(config.inclination_deg)
    omega = config.orbital_rate_rad_s
    r = config.orbit_radius_km

    phase0 = 2.0 * np.pi * py / ny + 2.0 * np.pi * config.phasing * px / (nx * ny)
    t = np.arange(config.n_slots) * config.slot_duration_s
    beta = phase0[None, :] + omega * t[:, None]  # (n_slots, n_sats)

    cosb, sinb = np.cos(beta), np.sin(beta)
    cosO, sinO = np.cos(raan)[None, :], np.sin(raan)[None, :]
    cosi, sini = np.cos(inc), np.sin(inc)

    pos = np.empty((config.n_slots, config.n_sats, 3))
    pos[:, :, 0] = r * (cosb * cosO - sinb * cosi * sinO)
    pos[:, :, 1] = r * (cosb * sinO + sinb * cosi * cosO)
    pos[:, :, 2] = r * (sinb * sini)
    pos.setflags(write=False)

    plane_raan = span * np.arange(nx) / nx
    normals = np.stack(
        [sini * np.sin(plane_raan), -sini * np.cos(plane_raan), np.full(nx, cosi)], axis=1
    )
    normals.setflags(write=False)
    return Ephemeris(config=config, positions=pos, plane_normals=normals)


def central_angle(eph: Ephemeris, u: GridCoord, v: GridCoord, slot: int) -> float:
    """Geocentric angle (rad) between satellites u and v at the given slot."""
    eph._check_slot(slot)
    cfg = eph.config
    pu = eph.positions[slot, cfg.coord_id(u)]
    pv = eph.positions[slot, cfg.coord_id(v)]
    r2 = cfg.orbit_radius_km**2
    c = float(np.dot(pu, pv)) / r2
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def _rotate(vec: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of row vectors about unit row axes; angle may be 0."""
    ca = np.cos(angle)[..., None]
    sa = np.sin(angle)[..., None]
    cross = np.cross(axis, vec)
    dot = np.sum(axis * vec, axis=-1, keepdims=True)
    return vec * ca + cross * sa + axis * dot * (1.0 - ca)


def los_angular_rates(
    eph: Ephemeris, u_ids: np.ndarray, v_ids: np.ndarray, slot: int
) -> np.ndarray:
    """Line-of-sight slew rates (rad/s) for id pairs, vectorized.

    The rate is the rotation rate of the unit LOS vector measured in the frame
    co-rotating at the pair's mean orbital angular velocity, estimated by a
    central finite difference over the two adjacent slots (the slot sequence
    is treated as cyclic at the ends). Co-planar pairs fly as a rigid
    formation in that frame, so their rate is exactly zero; counter-rotating
    seam pairs see nearly the full inertial slew of their fly-by.

    Rings shorter than 3 slots collapse the difference stencil onto a single
    slot and the co-planar rate degrades to ~orbital rate; a 1- or 2-slot
    config is fine for static routing but not for rate thresholds below that.
    """
    eph._check_slot(slot)
    cfg = eph.config
    nt = cfg.n_slots
    dt = cfg.slot_duration_s
    prev, nxt = (slot - 1) % nt, (slot + 1) % nt

    rel_p = eph.positions[prev, v_ids] - eph.positions[prev, u_ids]
    rel_n = eph.positions[nxt, v_ids] - eph.positions[nxt, u_ids]
    rel_0 = eph.positions[slot, v_ids] - eph.positions[slot, u_ids]
    norm_p = np.linalg.norm(rel_p, axis=-1)
    norm_n = np.linalg.norm(rel_n, axis=-1)
    norm_0 = np.linalg.norm(rel_0, axis=-1)
    if np.any(np.minimum(norm_0, np.minimum(norm_p, norm_n)) < COINCIDENT_SEPARATION_KM):
        raise ValueError("coincident satellite positions: line of sight undefined")
    l_p = rel_p / norm_p[:, None]
    l_n = rel_n / norm_n[:, None]

    hu = eph.plane_normals[u_ids // cfg.sats_per_plane]
    hv = eph.plane_normals[v_ids // cfg.sats_per_plane]
    w = 0.5 * cfg.orbital_rate_rad_s * (hu + hv)
    wmag = np.linalg.norm(w, axis=-1)
    # Exactly antiparallel planes leave a zero mean rotation; use a fixed axis
    # with zero angle so the rotation degenerates to the identity.
    safe = np.where(wmag > 0.0, wmag, 1.0)[:, None]
    axis = np.where(wmag[:, None] > 0.0, w / safe, np.array([1.0, 0.0, 0.0]))

    l_p = _rotate(l_p, axis, wmag * dt)
    l_n = _rotate(l_n, axis, -wmag * dt)

    chord = np.linalg.norm(l_n - l_p, axis=-1)
    angle = 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))
    return angle / (2.0 * dt)


def los_angular_rate(eph: Ephemeris, u: GridCoord, v: GridCoord, slot: int) -> float:
    """Scalar form of los_angular_rates for one coordinate pair."""
    cfg = eph.config
    uid = np.array([cfg.coord_id(u)])
    vid = np.array([cfg.coord_id(v)])
    return float(los_angular_rates(eph, uid, vid, slot)[0])
