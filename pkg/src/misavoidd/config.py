"""Run configuration: one JSON document with train, synth and data sections.

Every field has a default, so ``{}`` is a complete config. Unknown keys
are rejected so typos fail loudly instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .data import SynthConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    manifest: str | None = None


@dataclass
class AblationConfig:
    seeds: list[int] = field(default_factory=lambda: [0])


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataPaths = field(default_factory=DataPaths)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s) {', '.join(where + k for k in unknown)}")
    default = cls()
    kwargs = {}
    for name, f in known.items():
        cur = getattr(default, name)
        if name not in values:
            kwargs[name] = cur
        elif is_dataclass(cur):
            kwargs[name] = _build(type(cur), values[name], f"{where}{name}.")
        else:
            kwargs[name] = _coerce(values[name], cur, where + name)
    return cls(**kwargs)


def _coerce(value: Any, default: Any, key: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def from_dict(values: dict) -> RunConfig:
    cfg = _build(RunConfig, values, "")
    try:
        cfg.train.validate()
        cfg.synth.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def load(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file (if any), then ``overrides`` given as dotted keys."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            values = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: invalid JSON ({e})") from e
    for dotted, v in (overrides or {}).items():
        node = values
        *parents, leaf = dotted.split(".")
        for k in parents:
            node = node.setdefault(k, {})
        node[leaf] = v
    return from_dict(values)


def save(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(cfg.to_json() + "\n")
