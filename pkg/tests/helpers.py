"""Shared builders and independent oracle implementations for the tests.

Oracles here are deliberately written as plain loops over the scalar API
so they stay independent of the vectorized production paths they check.
"""

from __future__ import annotations

import numpy as np

from uavrelay.env import EnvConfig, RelayEnv
from uavrelay.feasibility import CandidateConfig
from uavrelay.radio import LinkParams, ThresholdSet, access_ok, backhaul_ok
from uavrelay.terrain import LandCover, TerrainMap, elevation_at


def flat_map(h: int = 24, w: int = 24, cell: float = 400.0, elev: float = 0.0,
             cover: int = int(LandCover.OPEN)) -> TerrainMap:
    return TerrainMap(
        elevation=np.full((h, w), elev, dtype=np.float32),
        cover=np.full((h, w), cover, dtype=np.uint8),
        cell_size_m=cell,
    )


def custom_map(elevation: np.ndarray, cover: np.ndarray | None = None,
               cell: float = 400.0) -> TerrainMap:
    elevation = np.asarray(elevation, dtype=np.float32)
    if cover is None:
        cover = np.full(elevation.shape, LandCover.OPEN, dtype=np.uint8)
    return TerrainMap(elevation=elevation, cover=cover, cell_size_m=cell)


def small_env_cfg(**overrides) -> EnvConfig:
    """A fast environment on a 24x24-cell map (region radius 2 km)."""
    base = dict(
        num_users=3,
        episode_len=40,
        user_region_radius_m=2000.0,
        obs_map_h=12,
        obs_map_w=12,
        seed=0,
    )
    base.update(overrides)
    return EnvConfig(**base)


def small_env(terrain=None, cfg=None, **cfg_overrides) -> RelayEnv:
    terrain = terrain if terrain is not None else flat_map()
    cfg = cfg if cfg is not None else small_env_cfg(**cfg_overrides)
    return RelayEnv(terrain, cfg)


def abs_z(m: TerrainMap, p) -> np.ndarray:
    """AGL point -> absolute-z point, via the scalar elevation query."""
    return np.array([p[0], p[1], elevation_at(m, float(p[0]), float(p[1])) + p[2]])


def randomize_biases(net, rng, scale: float = 0.3) -> None:
    """Move biases off zero so rectifier pre-activations avoid exact kinks."""
    for b in net.biases:
        b += rng.normal(0.0, scale, size=b.shape).astype(b.dtype)


def relu_kink_margin(net, x) -> float:
    """Smallest |pre-activation| over the net's rectified layers.

    Finite differences are only trustworthy when this margin comfortably
    exceeds the probe step h.
    """
    h = np.atleast_2d(np.asarray(x))
    margin = np.inf
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ w + b
        if i < last:
            margin = min(margin, float(np.min(np.abs(pre))))
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return margin


def n_served_loops(m, params: LinkParams, thr: ThresholdSet, placement, users, bs) -> int:
    """Straight-line served count: scalar predicates, explicit loops."""
    p = abs_z(m, placement)
    if not backhaul_ok(m, params, thr, abs_z(m, bs), p):
        return 0
    count = 0
    for u in users:
        if access_ok(m, params, thr, p, abs_z(m, u)):
            count += 1
    return count


def brute_force_fub(m, params: LinkParams, thr: ThresholdSet, placements, users, bs):
    """Independent maximizer with the same tie-break contract.

    Returns (n_star, index of winner).
    """
    centroid = np.asarray(users, dtype=np.float64)[:, :2].mean(axis=0)
    best_n, best_i, best_d2 = -1, -1, np.inf
    for i, p in enumerate(placements):
        n = n_served_loops(m, params, thr, p, users, bs)
        d2 = (p[0] - centroid[0]) ** 2 + (p[1] - centroid[1]) ** 2
        if n > best_n or (n == best_n and d2 < best_d2):
            best_n, best_i, best_d2 = n, i, d2
    return best_n, best_i
