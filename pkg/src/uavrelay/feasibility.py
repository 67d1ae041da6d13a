"""Candidate placements, served-user counts, and the feasibility upper bound.

The bound at a step is the maximum number of users servable from a finite
candidate set of UAV placements; it normalizes rewards and separates
physically infeasible steps from control mistakes.

All placements and positions in this module use z above ground level
(AGL); conversion to absolute heights happens at the radio boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .radio import LinkParams, ThresholdSet, cover_offset_at, rssi_dbm_many
from .terrain import TerrainMap, elevation_at_many


@dataclass(frozen=True)
class CandidateConfig:
    """How the candidate placement set is built each step."""

    grid_x: int = 8
    grid_y: int = 5
    altitudes_m: tuple[float, ...] = (60.0, 120.0, 240.0)
    include_above_users: bool = True
    include_centroid: bool = True
    include_current_uav: bool = True
    hover_alt_m: float = 120.0  # altitude for above-user and centroid candidates

    def validate(self, alt_min: float | None = None, alt_max: float | None = None) -> None:
        has_grid = self.grid_x > 0 and self.grid_y > 0 and len(self.altitudes_m) > 0
        if not (has_grid or self.include_above_users or self.include_centroid or self.include_current_uav):
            raise ConfigError("no candidate source enabled")
        if alt_min is not None:
            alts = list(self.altitudes_m) + [self.hover_alt_m]
            for a in alts:
                if not (alt_min <= a <= alt_max):
                    raise ConfigError(f"candidate altitude {a} outside [{alt_min}, {alt_max}]")


@dataclass(frozen=True)
class CandidateSet:
    placements: np.ndarray  # (N, 3) float64, z AGL

    def __post_init__(self):
        if len(self.placements) == 0:
            raise DomainError("candidate set must be non-empty")

    def __len__(self) -> int:
        return len(self.placements)


@dataclass(frozen=True)
class FeasibilityRecord:
    t: int
    n_star: int
    best_placement: tuple[float, float, float]
    n_served_actual: int


def build_candidates(ccfg: CandidateConfig, world) -> CandidateSet:
    """Assemble the hybrid candidate set for the current world state.

    Order: lattice points (per altitude, row-major over the user region's
    bounding square), then above-user points, the user-centroid point, and
    finally the current UAV position. Placements within 1 m of an earlier
    one are dropped.
    """
    cfg = world.cfg
    cx, cy = world.bs_xy
    r = cfg.user_region_radius_m
    pts: list[tuple[float, float, float]] = []
    if ccfg.grid_x > 0 and ccfg.grid_y > 0:
        xs = cx - r + (np.arange(ccfg.grid_x) + 0.5) * (2.0 * r / ccfg.grid_x)
        ys = cy - r + (np.arange(ccfg.grid_y) + 0.5) * (2.0 * r / ccfg.grid_y)
        for alt in ccfg.altitudes_m:
            for y in ys:
                for x in xs:
                    pts.append((float(x), float(y), float(alt)))
    if ccfg.include_above_users:
        for u in range(len(world.users_pos)):
            pts.append((float(world.users_pos[u, 0]), float(world.users_pos[u, 1]), ccfg.hover_alt_m))
    if ccfg.include_centroid:
        cent = world.users_pos[:, :2].mean(axis=0)
        pts.append((float(cent[0]), float(cent[1]), ccfg.hover_alt_m))
    if ccfg.include_current_uav:
        pts.append((float(world.uav_pos[0]), float(world.uav_pos[1]), float(world.uav_pos[2])))

    arr = np.asarray(pts, dtype=np.float64)
    diff = arr[:, None, :] - arr[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    dropped = np.zeros(len(arr), dtype=bool)
    keep: list[int] = []
    for i in range(len(arr)):
        if dropped[i]:
            continue
        keep.append(i)
        dropped |= d2[i] < 1.0  # later points within 1 m of a kept one go away
    return CandidateSet(placements=arr[keep])


def served_counts(
    m: TerrainMap,
    params: LinkParams,
    thresholds: ThresholdSet,
    placements: np.ndarray,
    users: np.ndarray,
    bs: np.ndarray,
) -> np.ndarray:
    """Served-user count at each placement (vectorized over placements).

    ``placements`` is (N, 3) with z AGL, ``users`` (U, 3) with z AGL,
    ``bs`` (3,) with z AGL. A placement serves a user iff its backhaul
    passes tau_b and that user's access link passes tau_a.
    """
    placements = np.atleast_2d(np.asarray(placements, dtype=np.float64))
    users = np.atleast_2d(np.asarray(users, dtype=np.float64))
    n_p, n_u = len(placements), len(users)

    ground_p = elevation_at_many(m, placements[:, 0], placements[:, 1])
    p_abs = placements.copy()
    p_abs[:, 2] = ground_p + placements[:, 2]

    bs = np.asarray(bs, dtype=np.float64)
    bs_abs = bs.copy()
    bs_abs[2] = float(elevation_at_many(m, bs[0], bs[1])) + bs[2]

    ground_u = elevation_at_many(m, users[:, 0], users[:, 1])
    u_abs = users.copy()
    u_abs[:, 2] = ground_u + users[:, 2]

    bs_offset = cover_offset_at(m, params, float(bs[0]), float(bs[1]))
    bh = rssi_dbm_many(
        m, params,
        np.broadcast_to(bs_abs, (n_p, 3)), p_abs,
        params.bs_tx_dbm, np.full(n_p, bs_offset),
    )
    backhaul_pass = bh >= thresholds.tau_b_dbm

    user_offsets = np.array(
        [cover_offset_at(m, params, float(u[0]), float(u[1])) for u in users]
    )
    tx = np.repeat(p_abs, n_u, axis=0)
    rx = np.tile(u_abs, (n_p, 1))
    offs = np.tile(user_offsets, n_p)
    acc = rssi_dbm_many(m, params, tx, rx, params.uav_tx_dbm, offs)
    access_pass = (acc >= thresholds.tau_a_dbm).reshape(n_p, n_u)

    return np.where(backhaul_pass, access_pass.sum(axis=1), 0).astype(np.int64)


def n_served(
    m: TerrainMap,
    params: LinkParams,
    thresholds: ThresholdSet,
    placement,
    users: np.ndarray,
    bs,
) -> int:
    """Users served from a single placement (0 if backhaul fails)."""
    return int(served_counts(m, params, thresholds, np.asarray(placement)[None, :], users, bs)[0])


def select_best(counts: np.ndarray, placements: np.ndarray, users: np.ndarray) -> tuple[int, int]:
    """(n_star, winning index) under the deterministic tie-break.

    Ties on count go to the placement closest (in xy) to the user
    centroid, then to the earliest placement in order.
    """
    centroid = np.atleast_2d(np.asarray(users, dtype=np.float64))[:, :2].mean(axis=0)
    d2 = (placements[:, 0] - centroid[0]) ** 2 + (placements[:, 1] - centroid[1]) ** 2
    n_star = int(counts.max())
    d2_masked = np.where(counts == n_star, d2, np.inf)
    best_idx = int(np.argmin(d2_masked))  # first minimum = earliest in order
    return n_star, best_idx


def cs_fub(
    m: TerrainMap,
    params: LinkParams,
    thresholds: ThresholdSet,
    candidates: CandidateSet,
    users: np.ndarray,
    bs,
) -> tuple[int, np.ndarray]:
    """Max served users over the candidate set, with a deterministic winner."""
    counts = served_counts(m, params, thresholds, candidates.placements, users, bs)
    n_star, best_idx = select_best(counts, candidates.placements, users)
    return n_star, candidates.placements[best_idx].copy()
