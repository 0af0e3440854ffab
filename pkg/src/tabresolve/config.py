"""Flat ``key=value`` experiment configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .abstraction import PropertyKind
from .games import GameSpec


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    game: str = "goofspiel:4"
    kind: str = "legal-strategy-history"
    L: int = 0                                   # 0 = identity abstraction
    limits: list = field(default_factory=lambda: [1, 3, 7])
    T: int = 4
    depth: int = 1
    iterations: int = 1000
    blueprint_iterations: int = 1000
    strategy_iterations: int = 4000
    trajectories: list = field(default_factory=lambda: [100_000])
    eps: float = 0.5
    seeds: list = field(default_factory=lambda: [0])
    clustering: str = "online"
    gamma: float = 1.0
    hard_threshold: float = 0.3
    repulsion: float = 0.5
    noise: float = 0.02
    rate: float = 0.05
    episodes: int = 10_000
    agent_a: str = "uniform"
    agent_b: str = "uniform"
    output: str = "-"
    log: str = ""
    bundle: str = ""

    def validate(self) -> "ExperimentConfig":
        try:
            GameSpec.parse(self.game)
            PropertyKind(self.kind)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("T", "depth", "iterations", "blueprint_iterations",
                     "strategy_iterations", "episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.L < 0:
            raise ConfigError("L must be >= 0")
        for name in ("limits", "seeds", "trajectories"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if any(v < 1 for v in self.limits):
            raise ConfigError("limits must be >= 1")
        if any(v < 0 for v in self.trajectories):
            raise ConfigError("trajectories must be >= 0 (0 = exhaustive)")
        if not 0.0 <= self.eps <= 1.0:
            raise ConfigError("eps must be in [0, 1]")
        if self.clustering not in ("online", "kmeans"):
            raise ConfigError("clustering must be online or kmeans")
        return self

    def set(self, key: str, value: str) -> None:
        fields = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            if isinstance(current, list):
                parsed = [int(v) for v in value.split(",") if v.strip()]
            elif isinstance(current, bool):
                parsed = value.lower() in ("1", "true", "yes")
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        setattr(self, key, parsed)

    def format(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, overrides=()) -> "ExperimentConfig":
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key=value")
            key, value = line.split("=", 1)
            cfg.set(key.strip(), value.strip())
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r}: expected key=value")
            key, value = item.split("=", 1)
            cfg.set(key.strip(), value.strip())
        return cfg.validate()
