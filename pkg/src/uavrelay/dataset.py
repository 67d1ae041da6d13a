"""Offline transition datasets: behavior policies, generation, binary container.

The container is bit-exact and self-describing (magic ``UVDS``): header
carries the record count and state dimension, records are packed
little-endian. Rewards are stored at generation time, so trainers never
touch the simulator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .env import RelayEnv, WorldState, encode_action
from .errors import ConfigError, DimensionError, DomainError, FormatError
from .feasibility import build_candidates, cs_fub, served_counts

DATASET_MAGIC = b"UVDS"
DATASET_VERSION = 1
_DS_HEADER = struct.Struct("<4sIQI")  # magic, version, count, state_dim
HEADER_SIZE = _DS_HEADER.size

POLICY_NAMES = ("random", "centroid", "coverage", "oracle")


def record_dtype(state_dim: int) -> np.dtype:
    return np.dtype(
        [
            ("state", "<f4", (state_dim,)),
            ("action", "<u2"),
            ("reward", "<f4"),
            ("next_state", "<f4", (state_dim,)),
            ("done", "u1"),
        ]
    )


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class TransitionArrays:
    """Column layout of a whole dataset, ready for minibatch training."""

    states: np.ndarray       # (N, d) float32
    actions: np.ndarray      # (N,) int64
    rewards: np.ndarray      # (N,) float32
    next_states: np.ndarray  # (N, d) float32
    dones: np.ndarray        # (N,) bool

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


class DatasetWriter:
    """Incremental writer; the header count is patched on close."""

    def __init__(self, path, state_dim: int):
        if state_dim < 1:
            raise ConfigError("state_dim must be >= 1")
        self.state_dim = state_dim
        self._dtype = record_dtype(state_dim)
        self._f = open(path, "wb")
        self._count = 0
        self._f.write(_DS_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, 0, state_dim))

    def write_batch(self, records: np.ndarray) -> None:
        assert records.dtype == self._dtype
        self._f.write(records.tobytes())
        self._count += len(records)

    def write(self, state, action: int, reward: float, next_state, done: bool) -> None:
        rec = np.empty(1, dtype=self._dtype)
        rec["state"][0] = state
        rec["action"][0] = action
        rec["reward"][0] = reward
        rec["next_state"][0] = next_state
        rec["done"][0] = 1 if done else 0
        self.write_batch(rec)

    def close(self) -> None:
        self._f.seek(8)
        self._f.write(struct.pack("<Q", self._count))
        self._f.close()

    def __enter__(self) -> "DatasetWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_dataset(path, transitions, state_dim: int) -> None:
    with DatasetWriter(path, state_dim) as w:
        for tr in transitions:
            w.write(tr.state, tr.action, tr.reward, tr.next_state, tr.done)


def read_header(path) -> tuple[int, int]:
    """Return (count, state_dim) after validating magic/version/length."""
    with open(path, "rb") as f:
        head = f.read(_DS_HEADER.size)
        f.seek(0, 2)
        total = f.tell()
    if len(head) < _DS_HEADER.size:
        raise FormatError(f"truncated header: need {_DS_HEADER.size} bytes, got {len(head)}")
    magic, version, count, state_dim = _DS_HEADER.unpack(head)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DATASET_MAGIC!r} (offset 0)")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported version {version} (offset 4)")
    expected = _DS_HEADER.size + count * record_dtype(state_dim).itemsize
    if total != expected:
        raise FormatError(
            f"bad file length: header declares {count} records of dim {state_dim} "
            f"({expected} bytes), file has {total} bytes"
        )
    return count, state_dim


def read_dataset(path, expected_state_dim: int | None = None) -> Iterator[Transition]:
    """Stream transitions one at a time."""
    count, state_dim = read_header(path)
    if expected_state_dim is not None and state_dim != expected_state_dim:
        raise DimensionError(
            f"dataset state_dim {state_dim} != expected {expected_state_dim}"
        )
    dtype = record_dtype(state_dim)
    with open(path, "rb") as f:
        f.seek(_DS_HEADER.size)
        remaining = count
        while remaining > 0:
            n = min(remaining, 4096)
            chunk = np.frombuffer(f.read(n * dtype.itemsize), dtype=dtype)
            for rec in chunk:
                yield Transition(
                    state=rec["state"].copy(),
                    action=int(rec["action"]),
                    reward=float(rec["reward"]),
                    next_state=rec["next_state"].copy(),
                    done=bool(rec["done"]),
                )
            remaining -= n


def load_states(path) -> np.ndarray:
    """Load only the state column (enough for codec fitting, half the memory)."""
    count, state_dim = read_header(path)
    dtype = record_dtype(state_dim)
    states = np.empty((count, state_dim), dtype=np.float32)
    with open(path, "rb") as f:
        f.seek(HEADER_SIZE)
        at = 0
        while at < count:
            n = min(count - at, 4096)
            chunk = np.frombuffer(f.read(n * dtype.itemsize), dtype=dtype)
            states[at : at + n] = chunk["state"]
            at += n
    return states


def load_arrays(path, expected_state_dim: int | None = None) -> TransitionArrays:
    """Load a whole dataset into column arrays (chunked to bound peak memory)."""
    count, state_dim = read_header(path)
    if expected_state_dim is not None and state_dim != expected_state_dim:
        raise DimensionError(
            f"dataset state_dim {state_dim} != expected {expected_state_dim}"
        )
    dtype = record_dtype(state_dim)
    out = TransitionArrays(
        states=np.empty((count, state_dim), dtype=np.float32),
        actions=np.empty(count, dtype=np.int64),
        rewards=np.empty(count, dtype=np.float32),
        next_states=np.empty((count, state_dim), dtype=np.float32),
        dones=np.empty(count, dtype=bool),
    )
    with open(path, "rb") as f:
        f.seek(_DS_HEADER.size)
        at = 0
        while at < count:
            n = min(count - at, 4096)
            chunk = np.frombuffer(f.read(n * dtype.itemsize), dtype=dtype)
            out.states[at : at + n] = chunk["state"]
            out.actions[at : at + n] = chunk["action"]
            out.rewards[at : at + n] = chunk["reward"]
            out.next_states[at : at + n] = chunk["next_state"]
            out.dones[at : at + n] = chunk["done"] != 0
            at += n
    return out


# -- behavior policies -----------------------------------------------------


def policy_random(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 27))


def _axis_step(delta: float, dead_band: float) -> int:
    if delta > dead_band:
        return 1
    if delta < -dead_band:
        return -1
    return 0


def policy_centroid(env: RelayEnv, world: WorldState) -> int:
    """Unit step toward the user centroid in xy and toward 120 m altitude.

    Axes inside half a step of their target hold still, so the policy
    settles instead of oscillating.
    """
    cfg = env.cfg
    cent = world.users_pos[:, :2].mean(axis=0)
    target_alt = float(np.clip(120.0, cfg.uav_alt_min_m, cfg.uav_alt_max_m))
    dx = _axis_step(cent[0] - world.uav_pos[0], cfg.uav_step_xy_m / 2.0)
    dy = _axis_step(cent[1] - world.uav_pos[1], cfg.uav_step_xy_m / 2.0)
    dz = _axis_step(target_alt - world.uav_pos[2], cfg.uav_step_z_m / 2.0)
    return encode_action(dx, dy, dz)


def policy_coverage(env: RelayEnv, world: WorldState) -> int:
    """One-step lookahead: pick the displacement serving the most users now.

    Users are held at their current positions; ties go to the lowest
    action index.
    """
    lookahead = np.stack([env._apply_action(world.uav_pos, a) for a in range(27)])
    counts = served_counts(
        env.terrain, env.link_params, env.thresholds, lookahead, world.users_pos, env.bs_pos
    )
    return int(np.argmax(counts))


def policy_oracle(env: RelayEnv, world: WorldState) -> int:
    """Greedy per-axis pursuit of the current feasibility-bound winner."""
    cands = build_candidates(env.candidate_cfg, world)
    _, best = cs_fub(
        env.terrain, env.link_params, env.thresholds, cands, world.users_pos, env.bs_pos
    )
    cfg = env.cfg
    dx = _axis_step(best[0] - world.uav_pos[0], cfg.uav_step_xy_m / 2.0)
    dy = _axis_step(best[1] - world.uav_pos[1], cfg.uav_step_xy_m / 2.0)
    dz = _axis_step(best[2] - world.uav_pos[2], cfg.uav_step_z_m / 2.0)
    return encode_action(dx, dy, dz)


@dataclass(frozen=True)
class PolicyMix:
    """Episode-level mixture weights over the behavior policies."""

    random: float = 0.3
    centroid: float = 0.3
    coverage: float = 0.3
    oracle: float = 0.1

    def validate(self) -> None:
        w = self.as_weights()
        if np.any(w < 0):
            raise ConfigError("mixture weights must be >= 0")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ConfigError(f"mixture weights must sum to 1, got {float(w.sum())}")

    def as_weights(self) -> np.ndarray:
        return np.array([self.random, self.centroid, self.coverage, self.oracle])


def generate_dataset(
    env: RelayEnv,
    mix: PolicyMix,
    n_transitions: int,
    seed: int,
    out_path,
) -> dict:
    """Roll whole episodes under mixture-drawn policies until n records exist.

    One policy drives a whole episode; the file is truncated at exactly
    ``n_transitions``. Deterministic in (env config, mix, n, seed).
    """
    if n_transitions < 1:
        raise ConfigError("n_transitions must be >= 1")
    mix.validate()
    weights = mix.as_weights()
    selection_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))

    t_len = env.cfg.episode_len
    written = 0
    episodes = 0
    reward_sum = 0.0
    with DatasetWriter(out_path, env.d_obs) as writer:
        episode_index = 0
        while written < n_transitions:
            policy_name = POLICY_NAMES[int(selection_rng.choice(4, p=weights))]
            action_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([seed, episode_index, 1]))
            )
            world, obs = env.reset(episode_seed=seed + episode_index)
            take = min(t_len, n_transitions - written)
            records = np.empty(take, dtype=record_dtype(env.d_obs))
            for t in range(t_len):
                if policy_name == "random":
                    action = policy_random(action_rng)
                elif policy_name == "centroid":
                    action = policy_centroid(env, world)
                elif policy_name == "coverage":
                    action = policy_coverage(env, world)
                else:
                    action = policy_oracle(env, world)
                result = env.step(world, action)
                if t < take:
                    rec = records[t]
                    rec["state"] = obs
                    rec["action"] = action
                    rec["reward"] = result.reward
                    rec["next_state"] = result.next_obs
                    rec["done"] = 1 if result.done else 0
                    reward_sum += result.reward
                obs = result.next_obs
                if result.done or t + 1 >= take:
                    break
            writer.write_batch(records)
            written += take
            episodes += 1
            episode_index += 1
    return {
        "episodes": episodes,
        "transitions": written,
        "mean_reward": reward_sum / written,
    }
