"""Experiment configuration: dataclass model, JSON schema, validation.

A configuration is a single JSON document; every omitted key falls back to
its default, so ``{}`` is a complete baseline-free config. Top-level keys
mirror :class:`ExperimentConfig` fields; ``geometry``, ``rewards``, ``mc``,
``thresholds`` and ``presets`` are nested objects whose keys mirror the
corresponding dataclass fields. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from ..driving import ALTER, DEFENSIVE, HOTSHOT, PolicyParams, check_preset_contrast
from ..gatekeeper import MCConfig, Thresholds
from ..rewards import RewardConfig
from ..world import RoadGeometry, WorldConfig

MODES = ("baseline", "online", "observe")
BASELINE_POLICIES = ("Defensive", "Hotshot")


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a batch run needs, seeds included.

    ``mode`` selects the run kind: ``baseline`` pins every ego to
    ``baseline_policy`` and performs no risk evaluations; ``online`` places
    the first ``n_online`` egos under gatekeeper control (egos start in the
    Hotshot preset); ``observe`` pins egos to ``baseline_policy`` but still
    runs risk evaluations for logging.
    """

    n_worlds: int = 1200
    n_steps: int = 80
    n_ego: int = 12
    n_alter: int = 12
    n_online: int = 0
    mode: str = "baseline"
    baseline_policy: Optional[str] = "Hotshot"
    base_seed: int = 20_250_101
    geometry: RoadGeometry = field(default_factory=RoadGeometry)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    thresholds: Thresholds = field(default_factory=lambda: Thresholds(rho_star=2.0))
    defensive_params: PolicyParams = DEFENSIVE.params
    hotshot_params: PolicyParams = HOTSHOT.params
    alter_params: PolicyParams = ALTER.params
    vehicle_length: float = 5.0
    jam_threshold: int = 6
    n_tracked: int = 4
    output_dir: str = "out"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_worlds < 1 or self.n_steps < 1:
            raise ConfigError("n_worlds and n_steps must be at least 1")
        if self.n_ego < 1 or self.n_alter < 0:
            raise ConfigError("need at least one ego and a non-negative alter count")
        if not 0 <= self.n_online <= self.n_ego:
            raise ConfigError("n_online must lie in [0, n_ego]")
        if self.mode == "baseline" and self.n_online != 0:
            raise ConfigError("baseline runs must have n_online = 0")
        if self.mode in ("baseline", "observe"):
            if self.baseline_policy not in BASELINE_POLICIES:
                raise ConfigError(
                    f"{self.mode} runs need baseline_policy in {BASELINE_POLICIES}"
                )
        if self.mode == "online" and self.n_online < 1:
            raise ConfigError("online runs need n_online >= 1")
        if self.vehicle_length <= 0:
            raise ConfigError("vehicle_length must be positive")
        check_preset_contrast(self.defensive_params, self.hotshot_params)

    @property
    def online_ids(self) -> tuple[int, ...]:
        return tuple(range(self.n_online)) if self.mode == "online" else ()

    def initial_ego_params(self) -> PolicyParams:
        if self.mode == "online":
            return self.hotshot_params
        if self.baseline_policy == "Defensive":
            return self.defensive_params
        return self.hotshot_params

    def world_config(self) -> WorldConfig:
        return WorldConfig(
            geometry=self.geometry,
            n_ego=self.n_ego,
            n_alter=self.n_alter,
            ego_params=self.initial_ego_params(),
            alter_params=self.alter_params,
            vehicle_length=self.vehicle_length,
            horizon_steps=self.n_steps,
            jam_threshold=self.jam_threshold,
            n_tracked=self.n_tracked,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_worlds": self.n_worlds,
            "n_steps": self.n_steps,
            "n_ego": self.n_ego,
            "n_alter": self.n_alter,
            "n_online": self.n_online,
            "mode": self.mode,
            "baseline_policy": self.baseline_policy,
            "base_seed": self.base_seed,
            "geometry": dataclasses.asdict(self.geometry),
            "rewards": dataclasses.asdict(self.rewards),
            "mc": dataclasses.asdict(self.mc),
            "thresholds": dataclasses.asdict(self.thresholds),
            "presets": {
                "defensive": dataclasses.asdict(self.defensive_params),
                "hotshot": dataclasses.asdict(self.hotshot_params),
                "alter": dataclasses.asdict(self.alter_params),
            },
            "vehicle_length": self.vehicle_length,
            "jam_threshold": self.jam_threshold,
            "n_tracked": self.n_tracked,
            "output_dir": self.output_dir,
        }


def _build(cls, data: dict[str, Any], context: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{context} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def _build_params(base: PolicyParams, data: dict[str, Any], context: str) -> PolicyParams:
    if not isinstance(data, dict):
        raise ConfigError(f"{context} must be an object")
    known = {f.name for f in dataclasses.fields(PolicyParams)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    try:
        return replace(base, **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {context}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """Build a config from a parsed JSON object, defaults filling the gaps."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a JSON object")
    data = dict(data)
    kwargs: dict[str, Any] = {}
    if "geometry" in data:
        kwargs["geometry"] = _build(RoadGeometry, data.pop("geometry"), "geometry")
    if "rewards" in data:
        kwargs["rewards"] = _build(RewardConfig, data.pop("rewards"), "rewards")
    if "mc" in data:
        kwargs["mc"] = _build(MCConfig, data.pop("mc"), "mc")
    if "thresholds" in data:
        kwargs["thresholds"] = _build(Thresholds, data.pop("thresholds"), "thresholds")
    presets = data.pop("presets", None)
    if presets is not None:
        if not isinstance(presets, dict):
            raise ConfigError("presets must be an object")
        unknown = set(presets) - {"defensive", "hotshot", "alter"}
        if unknown:
            raise ConfigError(f"unknown preset names: {sorted(unknown)}")
        if "defensive" in presets:
            kwargs["defensive_params"] = _build_params(
                DEFENSIVE.params, presets["defensive"], "presets.defensive"
            )
        if "hotshot" in presets:
            kwargs["hotshot_params"] = _build_params(
                HOTSHOT.params, presets["hotshot"], "presets.hotshot"
            )
        if "alter" in presets:
            kwargs["alter_params"] = _build_params(
                ALTER.params, presets["alter"], "presets.alter"
            )
    simple = {
        "n_worlds": int, "n_steps": int, "n_ego": int, "n_alter": int,
        "n_online": int, "mode": str, "baseline_policy": (str, type(None)),
        "base_seed": int, "vehicle_length": (int, float), "jam_threshold": int,
        "n_tracked": int, "output_dir": str,
    }
    for key, expected in simple.items():
        if key in data:
            value = data.pop(key)
            if not isinstance(value, expected) or isinstance(value, bool):
                raise ConfigError(f"{key} has the wrong type: {value!r}")
            kwargs[key] = value
    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a JSON configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
