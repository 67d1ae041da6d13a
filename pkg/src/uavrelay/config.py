"""One YAML config tree for the whole pipeline, mirrored onto dataclasses.

Sections: map, env, radio (link params + thresholds), csfub, dataset,
repr, cql, eval, plus a global seed. Section seeds left unset derive from
the global seed with fixed offsets, so a single integer pins the whole
run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Any

import yaml

from .dataset import PolicyMix
from .env import EnvConfig
from .errors import ConfigError
from .feasibility import CandidateConfig
from .cql import CqlConfig
from .radio import LinkParams, ThresholdSet
from .terrain import MapGenConfig

# Offsets applied to the global seed for sections without an explicit seed.
_SEED_OFFSETS = {"map": 0, "env": 1, "dataset": 2, "repr": 3, "cql": 4, "eval": 5}


@dataclass(frozen=True)
class DatasetSection:
    n_transitions: int = 50_000
    mix: PolicyMix = field(default_factory=PolicyMix)
    seed: int = 0


@dataclass(frozen=True)
class ReprSection:
    kind: str = "vae"
    d_z: int = 64
    beta_kl: float = 1e-3
    epochs: int = 20
    lr: float = 1e-3
    batch: int = 256
    hidden: tuple[int, ...] = (512, 128)
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in ("pca", "ae", "vae"):
            raise ConfigError(f"repr.kind must be pca/ae/vae, got {self.kind!r}")


@dataclass(frozen=True)
class EvalSection:
    episodes: int = 30
    seeds: int = 3  # number of training seeds per method
    seed: int = 0   # base episode seed for evaluation rollouts

    def validate(self) -> None:
        if self.episodes < 1 or self.seeds < 1:
            raise ConfigError("eval.episodes and eval.seeds must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    map: MapGenConfig = field(default_factory=MapGenConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    radio: LinkParams = field(default_factory=LinkParams)
    thresholds: ThresholdSet = field(default_factory=ThresholdSet)
    csfub: CandidateConfig = field(default_factory=CandidateConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    repr: ReprSection = field(default_factory=ReprSection)
    cql: CqlConfig = field(default_factory=CqlConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        self.map.validate()
        self.env.validate()
        self.radio.validate()
        self.thresholds.validate()
        self.csfub.validate(self.env.uav_alt_min_m, self.env.uav_alt_max_m)
        self.dataset.mix.validate()
        self.repr.validate()
        self.cql.validate()
        self.eval.validate()


_TUPLE_FIELDS = {"hidden", "altitudes_m", "cover_offset_db", "bs_xy"}


def _build(cls, raw: dict, section: str, seed_override: int | None = None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{section}' must be a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        if key == "mix" and isinstance(value, dict):
            value = _build(PolicyMix, value, f"{section}.mix")
        kwargs[key] = value
    if seed_override is not None and "seed" not in raw:
        kwargs["seed"] = seed_override
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"section '{section}': {e}") from None


_RADIO_THRESHOLD_KEYS = {"tau_a_dbm", "tau_b_dbm"}


def config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed YAML tree."""
    raw = dict(raw or {})
    known = {"seed", "map", "env", "radio", "csfub", "dataset", "repr", "cql", "eval"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {sorted(unknown)}")
    seed = int(raw.get("seed", 0))
    if seed < 0:
        raise ConfigError("global seed must be >= 0")

    radio_raw = dict(raw.get("radio") or {})
    thr_raw = {k: radio_raw.pop(k) for k in list(radio_raw) if k in _RADIO_THRESHOLD_KEYS}

    cfg = RunConfig(
        seed=seed,
        map=_build(MapGenConfig, raw.get("map"), "map", seed + _SEED_OFFSETS["map"]),
        env=_build(EnvConfig, raw.get("env"), "env", seed + _SEED_OFFSETS["env"]),
        radio=_build(LinkParams, radio_raw, "radio"),
        thresholds=_build(ThresholdSet, thr_raw, "radio"),
        csfub=_build(CandidateConfig, raw.get("csfub"), "csfub"),
        dataset=_build(DatasetSection, raw.get("dataset"), "dataset", seed + _SEED_OFFSETS["dataset"]),
        repr=_build(ReprSection, raw.get("repr"), "repr", seed + _SEED_OFFSETS["repr"]),
        cql=_build(CqlConfig, raw.get("cql"), "cql", seed + _SEED_OFFSETS["cql"]),
        eval=_build(EvalSection, raw.get("eval"), "eval", seed + _SEED_OFFSETS["eval"]),
    )
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return config_from_dict(raw or {})
