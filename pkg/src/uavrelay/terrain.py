"""Elevation + land-cover maps: generation, queries, resampling, persistence.

Coordinates are in meters. A map covers the extent
``[0, width*cell_size_m] x [0, height*cell_size_m]``; grid cell ``(i, j)``
spans ``y in [i*cell, (i+1)*cell)``, ``x in [j*cell, (j+1)*cell)`` and its
sample point sits at the cell center. Row 0 is the ``y = 0`` edge.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError, DomainError, FormatError

MAP_MAGIC = b"TMAP"
MAP_VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class LandCover(IntEnum):
    """Surface classes with stable integer codes (used in files and features)."""

    WATER = 0
    OPEN = 1
    SPARSE = 2
    DENSE = 3


@dataclass(frozen=True)
class TerrainMap:
    """Immutable gridded elevation (m) plus per-cell land-cover class."""

    elevation: np.ndarray  # (H, W) float32, meters above datum
    cover: np.ndarray      # (H, W) uint8, LandCover codes
    cell_size_m: float

    def __post_init__(self):
        elev = np.ascontiguousarray(np.asarray(self.elevation, dtype=np.float32))
        cov = np.ascontiguousarray(np.asarray(self.cover, dtype=np.uint8))
        if elev.ndim != 2 or elev.shape[0] < 2 or elev.shape[1] < 2:
            raise ConfigError(f"elevation grid must be at least 2x2, got shape {elev.shape}")
        if cov.shape != elev.shape:
            raise ConfigError(f"cover shape {cov.shape} != elevation shape {elev.shape}")
        if not np.isfinite(elev).all():
            raise ConfigError("elevation contains non-finite values")
        if cov.max(initial=0) > max(LandCover):
            raise ConfigError("cover contains codes outside 0..3")
        if not (self.cell_size_m > 0):
            raise ConfigError(f"cell_size_m must be positive, got {self.cell_size_m}")
        elev.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "elevation", elev)
        object.__setattr__(self, "cover", cov)
        # The file stores cell size as f32; quantize now so round-trips are exact.
        object.__setattr__(self, "cell_size_m", float(np.float32(self.cell_size_m)))

    @property
    def height(self) -> int:
        return self.elevation.shape[0]

    @property
    def width(self) -> int:
        return self.elevation.shape[1]

    @property
    def extent_x(self) -> float:
        return self.width * self.cell_size_m

    @property
    def extent_y(self) -> float:
        return self.height * self.cell_size_m

    def __eq__(self, other) -> bool:
        if not isinstance(other, TerrainMap):
            return NotImplemented
        return (
            self.cell_size_m == other.cell_size_m
            and self.elevation.shape == other.elevation.shape
            and np.array_equal(self.elevation, other.elevation)
            and np.array_equal(self.cover, other.cover)
        )


@dataclass(frozen=True)
class MapGenConfig:
    """Parameters for procedural map generation.

    Cover targets: ``water_fraction`` of the lowest cells become water;
    the top ``dense_fraction`` of a second noise field becomes dense
    vegetation, the next equally sized band sparse vegetation. Everything
    else is open land.
    """

    height: int = 64
    width: int = 40
    cell_size_m: float = 400.0
    elevation_amplitude_m: float = 150.0
    noise_octaves: int = 4
    water_fraction: float = 0.10
    dense_fraction: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.height < 2 or self.width < 2:
            raise ConfigError(f"map dimensions must be >= 2, got {self.height}x{self.width}")
        if not (self.cell_size_m > 0):
            raise ConfigError("cell_size_m must be positive")
        if self.elevation_amplitude_m < 0:
            raise ConfigError("elevation_amplitude_m must be >= 0")
        if self.noise_octaves < 1:
            raise ConfigError("noise_octaves must be >= 1")
        for name in ("water_fraction", "dense_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        # water + dense + sparse (sparse band mirrors dense) must fit.
        if self.water_fraction + 2.0 * self.dense_fraction > 1.0 + 1e-12:
            raise ConfigError("class fractions exceed 1 (water + 2*dense > 1)")


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _sample_lattice(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Smoothly interpolate a node lattice onto an HxW grid of cell centers."""
    ny, nx = values.shape
    y = (np.arange(height) + 0.5) / height * (ny - 1)
    x = (np.arange(width) + 0.5) / width * (nx - 1)
    iy = np.minimum(y.astype(np.int64), ny - 2)
    ix = np.minimum(x.astype(np.int64), nx - 2)
    fy = _smoothstep(y - iy)[:, None]
    fx = _smoothstep(x - ix)[None, :]
    v00 = values[np.ix_(iy, ix)]
    v01 = values[np.ix_(iy, ix + 1)]
    v10 = values[np.ix_(iy + 1, ix)]
    v11 = values[np.ix_(iy + 1, ix + 1)]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def _octave_noise(rng: np.random.Generator, height: int, width: int, octaves: int) -> np.ndarray:
    """Octave-summed value noise in [0, 1] (degenerate fields map to all-zero)."""
    total = np.zeros((height, width), dtype=np.float64)
    for octave in range(octaves):
        nodes_y = 4 * 2**octave + 1
        nodes_x = 4 * 2**octave + 1
        lattice = rng.random((nodes_y, nodes_x))
        total += _sample_lattice(lattice, height, width) * (0.5**octave)
    lo, hi = total.min(), total.max()
    if hi - lo < 1e-12:
        return np.zeros_like(total)
    return (total - lo) / (hi - lo)


def generate_map(cfg: MapGenConfig) -> TerrainMap:
    """Generate a deterministic synthetic map from ``cfg``.

    Elevation is octave value noise scaled so its range equals
    ``elevation_amplitude_m`` (minimum at 0 m). Cover classes are assigned
    by rank so realized fractions match the targets to within one cell.
    """
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    shape = (cfg.height, cfg.width)
    n_cells = cfg.height * cfg.width

    relief = _octave_noise(rng, cfg.height, cfg.width, cfg.noise_octaves)
    elevation = (relief * cfg.elevation_amplitude_m).astype(np.float32)

    vegetation = _octave_noise(rng, cfg.height, cfg.width, cfg.noise_octaves)

    cover = np.full(n_cells, LandCover.OPEN, dtype=np.uint8)
    n_water = int(round(cfg.water_fraction * n_cells))
    n_dense = int(round(cfg.dense_fraction * n_cells))
    elev_order = np.argsort(elevation.ravel(), kind="stable")
    water_idx = elev_order[:n_water]
    cover[water_idx] = LandCover.WATER

    if n_dense > 0:
        land_mask = np.ones(n_cells, dtype=bool)
        land_mask[water_idx] = False
        land_idx = np.nonzero(land_mask)[0]
        veg_order = land_idx[np.argsort(-vegetation.ravel()[land_idx], kind="stable")]
        cover[veg_order[:n_dense]] = LandCover.DENSE
        cover[veg_order[n_dense : 2 * n_dense]] = LandCover.SPARSE

    return TerrainMap(elevation=elevation, cover=cover.reshape(shape), cell_size_m=cfg.cell_size_m)


def _check_extent(m: TerrainMap, x: np.ndarray, y: np.ndarray) -> None:
    bad = (x < 0.0) | (x > m.extent_x) | (y < 0.0) | (y > m.extent_y)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DomainError(
            f"point ({float(np.atleast_1d(x)[i] if np.ndim(x) else x)}, "
            f"{float(np.atleast_1d(y)[i] if np.ndim(y) else y)}) outside map extent "
            f"[0, {m.extent_x}] x [0, {m.extent_y}]"
        )


def elevation_at_many(m: TerrainMap, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear elevation lookup for arrays of coordinates (meters)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_extent(m, x, y)
    cell = m.cell_size_m
    # Grid coordinates of the surrounding cell-center lattice.
    gx = x / cell - 0.5
    gy = y / cell - 0.5
    j0 = np.clip(np.floor(gx).astype(np.int64), 0, m.width - 2)
    i0 = np.clip(np.floor(gy).astype(np.int64), 0, m.height - 2)
    fx = np.clip(gx - j0, 0.0, 1.0)
    fy = np.clip(gy - i0, 0.0, 1.0)
    e = m.elevation
    v00 = e[i0, j0]
    v01 = e[i0, j0 + 1]
    v10 = e[i0 + 1, j0]
    v11 = e[i0 + 1, j0 + 1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def elevation_at(m: TerrainMap, x: float, y: float) -> float:
    """Bilinear interpolation of the four surrounding cell-center samples."""
    return float(elevation_at_many(m, np.float64(x), np.float64(y)))


def cover_at(m: TerrainMap, x: float, y: float) -> LandCover:
    """Nearest-cell land-cover class; exact cell boundaries go to the lower index."""
    _check_extent(m, np.float64(x), np.float64(y))
    cell = m.cell_size_m
    gx = x / cell
    gy = y / cell
    j = int(np.floor(gx))
    i = int(np.floor(gy))
    if gx == j and j > 0:
        j -= 1
    if gy == i and i > 0:
        i -= 1
    j = min(j, m.width - 1)
    i = min(i, m.height - 1)
    return LandCover(int(m.cover[i, j]))


def _overlap_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of interval overlap lengths in input-cell units."""
    ratio = n_in / n_out
    w = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        lo = o * ratio
        hi = (o + 1) * ratio
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            w[o, j] = min(hi, j + 1) - max(lo, j)
    return w


def resample(m: TerrainMap, out_h: int, out_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Resample to ``(out_h, out_w)``: area-averaged elevation, majority-vote cover.

    Majority ties pick the lowest class code. Returns float32 elevation and
    uint8 cover grids; identical grids when the shape already matches.
    """
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"output shape must be >= 1x1, got {out_h}x{out_w}")
    if out_h == m.height and out_w == m.width:
        return m.elevation.copy(), m.cover.copy()
    wy = _overlap_weights(m.height, out_h)
    wx = _overlap_weights(m.width, out_w)
    area = (m.height / out_h) * (m.width / out_w)
    elev = (wy @ m.elevation.astype(np.float64) @ wx.T) / area
    class_weights = np.stack(
        [wy @ (m.cover == c).astype(np.float64) @ wx.T for c in range(len(LandCover))]
    )
    cov = np.argmax(class_weights, axis=0).astype(np.uint8)  # first max = lowest code
    return elev.astype(np.float32), cov


def save_map(m: TerrainMap, path) -> None:
    """Write the binary map container (little-endian, magic ``TMAP``)."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAP_MAGIC, MAP_VERSION, m.height, m.width, np.float32(m.cell_size_m)))
        f.write(m.elevation.astype("<f4").tobytes())
        f.write(m.cover.astype("u1").tobytes())


def load_map(path) -> TerrainMap:
    """Read a map container, validating magic, version and exact length."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header: need {_HEADER.size} bytes, got {len(blob)} (offset 0)")
    magic, version, h, w, cell = _HEADER.unpack_from(blob, 0)
    if magic != MAP_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAP_MAGIC!r} (offset 0)")
    if version != MAP_VERSION:
        raise FormatError(f"unsupported version {version}, expected {MAP_VERSION} (offset 4)")
    expected = _HEADER.size + h * w * 4 + h * w
    if len(blob) != expected:
        raise FormatError(
            f"bad file length: expected {expected} bytes for {h}x{w} grids, got {len(blob)} "
            f"(grid data starts at offset {_HEADER.size})"
        )
    off = _HEADER.size
    elev = np.frombuffer(blob, dtype="<f4", count=h * w, offset=off).reshape(h, w)
    off += h * w * 4
    cov = np.frombuffer(blob, dtype="u1", count=h * w, offset=off).reshape(h, w)
    return TerrainMap(elevation=elev, cover=cov, cell_size_m=float(cell))
