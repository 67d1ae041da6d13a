"""The relay MDP: world state, UAV kinematics, user mobility, observation, reward.

Rewards are served-user counts normalized by the per-step feasibility
upper bound, so a value of 1 means "as good as the best candidate
placement allows right now" and steps where nothing is achievable score 0.

UAV and user altitudes are above ground level (AGL); the terrain under a
position never swallows it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, StateError
from .feasibility import CandidateConfig, build_candidates, select_best, served_counts
from .radio import LinkParams, ThresholdSet, cover_offset_at, rssi_dbm_many
from .terrain import TerrainMap, elevation_at_many, resample

N_ACTIONS = 27

# Affine RSSI feature normalization: -120 dBm -> 0, -70 dBm -> 1.
_RSSI_LO = -120.0
_RSSI_SPAN = 50.0


@dataclass(frozen=True)
class EnvConfig:
    num_users: int = 3
    episode_len: int = 600
    dt_s: float = 10.0
    user_speed_mps: float = 10.0
    user_height_m: float = 1.5
    bs_height_m: float = 20.0
    bs_xy: tuple[float, float] | None = None  # None -> map extent center
    uav_step_xy_m: float = 100.0
    uav_step_z_m: float = 10.0
    uav_alt_min_m: float = 30.0
    uav_alt_max_m: float = 300.0
    user_region_radius_m: float = 4000.0
    obs_map_h: int = 64
    obs_map_w: int = 40
    state_dim: int | None = None  # optional cross-check against d_obs
    seed: int = 0

    @property
    def d_obs(self) -> int:
        return 2 * self.obs_map_h * self.obs_map_w + 4 * self.num_users + 4

    def validate(self) -> None:
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        for name in ("dt_s", "user_speed_mps", "uav_step_xy_m", "uav_step_z_m", "user_region_radius_m"):
            if not (getattr(self, name) > 0):
                raise ConfigError(f"{name} must be positive")
        if not (self.uav_alt_min_m < self.uav_alt_max_m):
            raise ConfigError("uav_alt_min_m must be below uav_alt_max_m")
        if self.obs_map_h < 1 or self.obs_map_w < 1:
            raise ConfigError("observation map dims must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.state_dim is not None and self.state_dim != self.d_obs:
            raise ConfigError(
                f"state_dim {self.state_dim} inconsistent with observation layout "
                f"(2*{self.obs_map_h}*{self.obs_map_w} + {4 * self.num_users + 4} = {self.d_obs})"
            )


@dataclass
class WorldState:
    """Mutable per-episode state owned by a single episode runner."""

    t: int
    uav_pos: np.ndarray          # (3,) x, y, z AGL
    users_pos: np.ndarray        # (U, 3) x, y, z=user height
    waypoints: np.ndarray        # (U, 2)
    rng: np.random.Generator     # drives waypoint draws only
    cfg: EnvConfig
    bs_xy: tuple[float, float]
    terrain: TerrainMap


@dataclass(frozen=True)
class StepResult:
    next_obs: np.ndarray
    reward: float
    done: bool
    info: dict


def decode_action(index: int) -> tuple[int, int, int]:
    """Map an action index to a displacement triple in {-1,0,1}^3.

    index = (dx+1)*9 + (dy+1)*3 + (dz+1)
    """
    if not isinstance(index, (int, np.integer)) or not (0 <= index < N_ACTIONS):
        raise DomainError(f"action index must be in 0..26, got {index!r}")
    index = int(index)
    return index // 9 - 1, (index // 3) % 3 - 1, index % 3 - 1


def encode_action(dx: int, dy: int, dz: int) -> int:
    return (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)


def quantize_action(a) -> int:
    """Quantize a continuous triple in [-1,1]^3 onto the action grid.

    Components above 1/3 map to +1, below -1/3 to -1, the middle band
    (boundaries included) to 0.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (3,) or not np.isfinite(a).all():
        raise DomainError(f"expected a finite triple, got {a!r}")
    if np.any(np.abs(a) > 1.0):
        raise DomainError(f"components must be in [-1, 1], got {a!r}")
    steps = [1 if v > 1.0 / 3.0 else (-1 if v < -1.0 / 3.0 else 0) for v in a]
    return encode_action(*steps)


class RelayEnv:
    """Single-UAV relay environment over an immutable terrain map.

    One instance may serve many concurrent episodes: each `reset` returns
    an independent `WorldState`, and `step` mutates only the world passed
    to it.
    """

    def __init__(
        self,
        terrain: TerrainMap,
        cfg: EnvConfig,
        link_params: LinkParams | None = None,
        thresholds: ThresholdSet | None = None,
        candidate_cfg: CandidateConfig | None = None,
    ):
        cfg.validate()
        self.terrain = terrain
        self.cfg = cfg
        self.link_params = link_params or LinkParams()
        self.thresholds = thresholds or ThresholdSet()
        self.candidate_cfg = candidate_cfg or CandidateConfig()
        self.link_params.validate()
        self.thresholds.validate()
        self.candidate_cfg.validate(cfg.uav_alt_min_m, cfg.uav_alt_max_m)

        if cfg.bs_xy is not None:
            self.bs_xy = (float(cfg.bs_xy[0]), float(cfg.bs_xy[1]))
        else:
            self.bs_xy = (terrain.extent_x / 2.0, terrain.extent_y / 2.0)
        r = cfg.user_region_radius_m
        if (
            self.bs_xy[0] - r < 0.0
            or self.bs_xy[0] + r > terrain.extent_x
            or self.bs_xy[1] - r < 0.0
            or self.bs_xy[1] + r > terrain.extent_y
        ):
            raise ConfigError(
                f"user region (center {self.bs_xy}, radius {r}) extends outside map extent "
                f"[0, {terrain.extent_x}] x [0, {terrain.extent_y}]"
            )
        self.bs_pos = np.array([self.bs_xy[0], self.bs_xy[1], cfg.bs_height_m])
        self._bs_cover_offset = cover_offset_at(
            self.terrain, self.link_params, self.bs_xy[0], self.bs_xy[1]
        )
        self._map_channels = self._build_map_channels()

    # -- observation ------------------------------------------------------

    def _build_map_channels(self) -> np.ndarray:
        elev, cov = resample(self.terrain, self.cfg.obs_map_h, self.cfg.obs_map_w)
        lo = float(self.terrain.elevation.min())
        hi = float(self.terrain.elevation.max())
        if hi - lo < 1e-9:
            elev_norm = np.zeros_like(elev, dtype=np.float32)
        else:
            elev_norm = ((elev - lo) / (hi - lo)).astype(np.float32)
        cov_norm = (cov.astype(np.float32) / 3.0).astype(np.float32)
        return np.concatenate([elev_norm.ravel(), cov_norm.ravel()]).astype(np.float32)

    @property
    def d_obs(self) -> int:
        return self.cfg.d_obs

    def _norm_xy(self, x: float, y: float) -> tuple[float, float]:
        r = self.cfg.user_region_radius_m
        return (
            (x - (self.bs_xy[0] - r)) / (2.0 * r),
            (y - (self.bs_xy[1] - r)) / (2.0 * r),
        )

    def observe(self, world: WorldState) -> np.ndarray:
        """Assemble the flat observation vector (float32, all entries in [0, 1]).

        Layout: elevation channel, cover channel, UAV xyz, U user xyz,
        U access RSSI features, backhaul RSSI feature.
        """
        cfg = self.cfg
        u = cfg.num_users
        obs = np.empty(self.d_obs, dtype=np.float32)
        hw2 = 2 * cfg.obs_map_h * cfg.obs_map_w
        obs[:hw2] = self._map_channels

        k = hw2
        ux, uy = self._norm_xy(world.uav_pos[0], world.uav_pos[1])
        obs[k : k + 3] = (ux, uy, world.uav_pos[2] / cfg.uav_alt_max_m)
        k += 3
        for i in range(u):
            px, py = self._norm_xy(world.users_pos[i, 0], world.users_pos[i, 1])
            obs[k : k + 3] = (px, py, world.users_pos[i, 2] / cfg.uav_alt_max_m)
            k += 3

        obs[k : k + u + 1] = self._rssi_features(world)
        np.clip(obs, 0.0, 1.0, out=obs)
        return obs

    def _rssi_features(self, world: WorldState) -> np.ndarray:
        """Access RSSI per user plus the backhaul RSSI, affinely squashed to [0,1]."""
        m, params = self.terrain, self.link_params
        u = self.cfg.num_users
        uav_abs = world.uav_pos.copy()
        uav_abs[2] += float(elevation_at_many(m, world.uav_pos[0], world.uav_pos[1]))
        users_abs = world.users_pos.copy()
        users_abs[:, 2] += elevation_at_many(m, world.users_pos[:, 0], world.users_pos[:, 1])
        bs_abs = self.bs_pos.copy()
        bs_abs[2] += float(elevation_at_many(m, self.bs_pos[0], self.bs_pos[1]))

        offsets = np.empty(u)
        for i in range(u):
            offsets[i] = cover_offset_at(m, params, world.users_pos[i, 0], world.users_pos[i, 1])
        rssi = np.empty(u + 1)
        rssi[:u] = rssi_dbm_many(
            m, params, np.broadcast_to(uav_abs, (u, 3)), users_abs, params.uav_tx_dbm, offsets
        )
        rssi[u] = rssi_dbm_many(
            m, params, bs_abs[None, :], uav_abs[None, :], params.bs_tx_dbm,
            np.array([self._bs_cover_offset]),
        )[0]
        return np.clip((rssi - _RSSI_LO) / _RSSI_SPAN, 0.0, 1.0)

    # -- episode dynamics --------------------------------------------------

    def reset(self, episode_seed: int = 0) -> tuple[WorldState, np.ndarray]:
        """Start an episode: UAV over the BS at mid altitude, users drawn in the region."""
        cfg = self.cfg
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, episode_seed])))
        uav = np.array(
            [self.bs_xy[0], self.bs_xy[1], (cfg.uav_alt_min_m + cfg.uav_alt_max_m) / 2.0]
        )
        users = np.empty((cfg.num_users, 3))
        waypoints = np.empty((cfg.num_users, 2))
        for i in range(cfg.num_users):
            users[i, :2] = self._draw_in_region(rng)
            users[i, 2] = cfg.user_height_m
            waypoints[i] = self._draw_in_region(rng)
        world = WorldState(
            t=0,
            uav_pos=uav,
            users_pos=users,
            waypoints=waypoints,
            rng=rng,
            cfg=cfg,
            bs_xy=self.bs_xy,
            terrain=self.terrain,
        )
        return world, self.observe(world)

    def _draw_in_region(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform draw inside the user disc (radius R around the BS)."""
        radius = self.cfg.user_region_radius_m * np.sqrt(rng.random())
        theta = 2.0 * np.pi * rng.random()
        return np.array(
            [self.bs_xy[0] + radius * np.cos(theta), self.bs_xy[1] + radius * np.sin(theta)]
        )

    def _apply_action(self, uav_pos: np.ndarray, action: int) -> np.ndarray:
        """Displace and clamp: xy to the region square, z to the altitude band."""
        dx, dy, dz = decode_action(action)
        cfg = self.cfg
        r = cfg.user_region_radius_m
        out = uav_pos.copy()
        out[0] = np.clip(out[0] + dx * cfg.uav_step_xy_m, self.bs_xy[0] - r, self.bs_xy[0] + r)
        out[1] = np.clip(out[1] + dy * cfg.uav_step_xy_m, self.bs_xy[1] - r, self.bs_xy[1] + r)
        out[2] = np.clip(out[2] + dz * cfg.uav_step_z_m, cfg.uav_alt_min_m, cfg.uav_alt_max_m)
        return out

    def step(self, world: WorldState, action: int) -> StepResult:
        """Advance one step; reward is the served count over the feasibility bound."""
        cfg = self.cfg
        if world.t >= cfg.episode_len:
            raise StateError(f"episode already finished at t={world.t}")
        world.uav_pos = self._apply_action(world.uav_pos, action)
        advance_users(world)
        world.t += 1

        cands = build_candidates(self.candidate_cfg, world)
        placements = np.vstack([cands.placements, world.uav_pos[None, :]])
        counts = served_counts(
            self.terrain, self.link_params, self.thresholds, placements, world.users_pos, self.bs_pos
        )
        n_star, best_idx = select_best(counts[:-1], cands.placements, world.users_pos)
        n_srv = int(counts[-1])
        reward = n_srv / n_star if n_star > 0 else 0.0

        done = world.t == cfg.episode_len
        return StepResult(
            next_obs=self.observe(world),
            reward=reward,
            done=done,
            info={
                "n_served": n_srv,
                "n_star": n_star,
                "uav_pos": world.uav_pos.copy(),
                "best_placement": cands.placements[best_idx].copy(),
            },
        )


def advance_users(world: WorldState) -> None:
    """Waypoint mobility: constant-speed motion, redraw on arrival.

    Draws depend only on the episode rng and user geometry, never on UAV
    actions, so trajectories replay identically under any policy.
    """
    cfg = world.cfg
    travel = cfg.user_speed_mps * cfg.dt_s
    r = cfg.user_region_radius_m
    for i in range(len(world.users_pos)):
        delta = world.waypoints[i] - world.users_pos[i, :2]
        dist = float(np.hypot(delta[0], delta[1]))
        if dist <= travel:
            world.users_pos[i, :2] = world.waypoints[i]
            radius = r * np.sqrt(world.rng.random())
            theta = 2.0 * np.pi * world.rng.random()
            world.waypoints[i] = (
                world.bs_xy[0] + radius * np.cos(theta),
                world.bs_xy[1] + radius * np.sin(theta),
            )
        else:
            world.users_pos[i, :2] += delta * (travel / dist)
