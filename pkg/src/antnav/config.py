"""Run configuration with lossless JSON round-trip."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path


POLICY_KINDS = ("oracle", "oracle-direct", "color", "http")


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    seed: int = 42
    rooms: int = 3
    floors: int = 1
    min_room: float = 3.0
    max_room: float = 6.0


@dataclass
class GridConfig:
    dxy: float = 0.2
    dz: float = 0.5


@dataclass
class TourConfig:
    tau: float = 0.9
    lambda_overlap: float = 2.0
    vis_radius: float = 3.0


@dataclass
class SplatSettings:
    epsilon: float = 0.1
    hfov: float = 90.0
    out: int = 256


@dataclass
class NoiseConfig:
    scale_min: float = 0.5
    scale_max: float = 2.0
    pos_sigma: float = 0.0
    dropout: float = 0.0
    depth_sigma: float = 0.0
    seed: int = 0
    reducer: str = "mean"


@dataclass
class PolicyConfig:
    kind: str = "oracle"          # oracle | oracle-direct | color | http
    endpoint: str = ""
    timeout: float = 30.0


@dataclass
class EpisodeConfig:
    count: int = 5
    seed: int = 0
    d_th: float = 3.0
    max_steps: int = 25
    workers: int = 1


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    tour: TourConfig = field(default_factory=TourConfig)
    splat: SplatSettings = field(default_factory=SplatSettings)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    anticipation: bool = True
    hfov_sweep: list = field(default_factory=lambda: [60.0, 90.0, 120.0])
    out: str = "run"

    def validate(self) -> None:
        if self.policy.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.policy.kind!r}")
        if not 0 < self.tour.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if self.noise.reducer not in ("mean", "median"):
            raise ConfigError("reducer must be 'mean' or 'median'")
        if self.episodes.count < 1:
            raise ConfigError("episode count must be positive")
        if self.episodes.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in d.items():
        current = getattr(defaults, name)
        kwargs[name] = _build(type(current), value) if is_dataclass(current) else value
    return cls(**kwargs)
