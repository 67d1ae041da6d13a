"""Deterministic link budget: FSPL, terrain LOS occlusion, clutter loss, RSSI.

All 3D points here use absolute z (meters above the map datum). The
simulation layer works in altitudes above ground and converts before
calling in. Scalar operations delegate to the array kernels with
singleton inputs, so batched and scalar results are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .terrain import LandCover, TerrainMap, cover_at, elevation_at_many


@dataclass(frozen=True)
class LinkParams:
    """Propagation constants for both access and backhaul links."""

    freq_mhz: float = 2400.0
    uav_tx_dbm: float = 30.0
    bs_tx_dbm: float = 40.0
    nlos_penalty_db: float = 20.0
    # Extra loss by LandCover code at the ground terminal's cell.
    cover_offset_db: tuple[float, float, float, float] = (0.0, 0.0, 6.0, 15.0)
    los_sample_step_cells: float = 0.5

    def validate(self) -> None:
        if not (self.freq_mhz > 0):
            raise ConfigError("freq_mhz must be positive")
        if self.nlos_penalty_db < 0 or any(v < 0 for v in self.cover_offset_db):
            raise ConfigError("loss terms must be >= 0")
        if len(self.cover_offset_db) != len(LandCover):
            raise ConfigError("cover_offset_db needs one entry per land-cover class")
        if not (0.0 < self.los_sample_step_cells <= 1.0):
            raise ConfigError("los_sample_step_cells must be in (0, 1]")


@dataclass(frozen=True)
class ThresholdSet:
    tau_a_dbm: float = -90.0  # access RSSI threshold
    tau_b_dbm: float = -90.0  # backhaul RSSI threshold

    def validate(self) -> None:
        if not (math.isfinite(self.tau_a_dbm) and math.isfinite(self.tau_b_dbm)):
            raise ConfigError("thresholds must be finite")


def fspl_db(distance_m: float, freq_mhz: float) -> float:
    """Free-space pathloss, distances below 1 m clamped to 1 m.

    20*log10(d_km) + 20*log10(f_MHz) + 32.44
    """
    if not (math.isfinite(distance_m) and math.isfinite(freq_mhz)) or freq_mhz <= 0:
        raise DomainError(f"invalid fspl inputs: distance={distance_m}, freq={freq_mhz}")
    d_km = max(distance_m, 1.0) / 1000.0
    return 20.0 * math.log10(d_km) + 20.0 * math.log10(freq_mhz) + 32.44


def _fspl_db_many(distance_m: np.ndarray, freq_mhz: float) -> np.ndarray:
    d_km = np.maximum(distance_m, 1.0) / 1000.0
    return 20.0 * np.log10(d_km) + 20.0 * math.log10(freq_mhz) + 32.44


def los_clear_many(
    m: TerrainMap, p1: np.ndarray, p2: np.ndarray, step_cells: float = 0.5
) -> np.ndarray:
    """Vectorized LOS test for (N, 3) endpoint arrays (absolute z).

    Each segment is sampled at fixed fractions k/n, k = 1..n-1, where n is
    chosen so samples are at most ``step_cells * cell_size_m`` apart. The
    sample set is symmetric under endpoint swap, so occlusion is
    direction-independent. Endpoints themselves are never tested; a sample
    blocks iff terrain elevation strictly exceeds the segment height there.
    """
    p1 = np.atleast_2d(np.asarray(p1, dtype=np.float64))
    p2 = np.atleast_2d(np.asarray(p2, dtype=np.float64))
    step_m = step_cells * m.cell_size_m
    seg = p2 - p1
    length = np.sqrt((seg * seg).sum(axis=1))
    n = np.maximum(np.ceil(length / step_m).astype(np.int64), 1)
    max_inner = int(n.max()) - 1
    clear = np.ones(len(p1), dtype=bool)
    if max_inner <= 0:
        return clear
    k = np.arange(1, max_inner + 1, dtype=np.float64)
    nf = n[:, None].astype(np.float64)
    # Both weights come from the same integer ratios so that swapping the
    # endpoints reproduces bit-identical sample points (w1*p1 + w2*p2 with
    # w1 = (n-k)/n, w2 = k/n).
    w2 = k[None, :] / nf                   # (N, max_inner)
    w1 = (nf - k[None, :]) / nf
    valid = k[None, :] <= (n[:, None] - 1)
    sx = w1 * p1[:, 0, None] + w2 * p2[:, 0, None]
    sy = w1 * p1[:, 1, None] + w2 * p2[:, 1, None]
    sz = w1 * p1[:, 2, None] + w2 * p2[:, 2, None]
    # Park padded slots on the first endpoint; they are masked out below.
    sx = np.where(valid, sx, p1[:, 0, None])
    sy = np.where(valid, sy, p1[:, 1, None])
    ground = elevation_at_many(m, sx, sy)
    blocked = np.any((ground > sz) & valid, axis=1)
    return ~blocked


def los_clear(m: TerrainMap, p1, p2, step_cells: float = 0.5) -> bool:
    """True iff no sampled point of the segment dips below terrain."""
    return bool(los_clear_many(m, np.asarray(p1)[None, :], np.asarray(p2)[None, :], step_cells)[0])


def rssi_dbm_many(
    m: TerrainMap,
    params: LinkParams,
    tx: np.ndarray,
    rx: np.ndarray,
    tx_power_dbm: float,
    terminal_offsets_db: np.ndarray,
) -> np.ndarray:
    """RSSI for (N, 3) tx/rx arrays with precomputed terminal clutter offsets."""
    tx = np.atleast_2d(np.asarray(tx, dtype=np.float64))
    rx = np.atleast_2d(np.asarray(rx, dtype=np.float64))
    seg = tx - rx
    dist = np.sqrt((seg * seg).sum(axis=1))
    loss = _fspl_db_many(dist, params.freq_mhz)
    clear = los_clear_many(m, tx, rx, params.los_sample_step_cells)
    return tx_power_dbm - loss - params.nlos_penalty_db * (~clear) - terminal_offsets_db


def cover_offset_at(m: TerrainMap, params: LinkParams, x: float, y: float) -> float:
    return params.cover_offset_db[cover_at(m, x, y)]


def rssi_dbm(
    m: TerrainMap,
    params: LinkParams,
    tx,
    rx,
    tx_power_dbm: float,
    ground_terminal,
) -> float:
    """Received power: tx power minus FSPL, NLOS penalty and terminal clutter loss.

    The clutter offset comes from the land-cover class under
    ``ground_terminal`` (the user for access links, the base station for
    backhaul).
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    gt = np.asarray(ground_terminal, dtype=np.float64)
    offset = np.array([cover_offset_at(m, params, gt[0], gt[1])])
    return float(rssi_dbm_many(m, params, tx[None, :], rx[None, :], tx_power_dbm, offset)[0])


def access_ok(
    m: TerrainMap,
    params: LinkParams,
    thresholds: ThresholdSet,
    uav_pos,
    user_pos,
) -> bool:
    """UAV-to-user link meets tau_a (inclusive). Positions use absolute z."""
    return rssi_dbm(m, params, uav_pos, user_pos, params.uav_tx_dbm, user_pos) >= thresholds.tau_a_dbm


def backhaul_ok(
    m: TerrainMap,
    params: LinkParams,
    thresholds: ThresholdSet,
    bs_pos,
    uav_pos,
) -> bool:
    """Base-station-to-UAV link meets tau_b (inclusive). Positions use absolute z."""
    return rssi_dbm(m, params, bs_pos, uav_pos, params.bs_tx_dbm, bs_pos) >= thresholds.tau_b_dbm
