"""Pipeline configuration: defaults < config file < CLI flags < environment.

Secrets (the hashing key and the endpoint token) are read from environment
variables only; a config file that tries to carry one is rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .agents import EndpointSettings
from .audio import AudioConfig, VadConfig
from .errors import ConfigError
from .extraction import DEFAULT_ENTITY_TYPES, ExtractionConfig

ENV_PREFIX = "DEIDKIT_"
DOMAIN_KEY_ENV = "DEIDKIT_DOMAIN_KEY"
_SECRET_WORDS = ("key", "token", "secret", "password", "credential")


@dataclass(frozen=True)
class PipelineConfig:
    registry_path: str = ""
    chunk_size_words: int = 256
    passes: int = 2
    overlap_words: int = 16
    entity_types: tuple[str, ...] = DEFAULT_ENTITY_TYPES
    margin_s: float = 0.2
    min_gap_s: float = 0.05
    vad_floor: float = 100.0
    relex_enabled: bool = False
    index_path: str = "relex_index.jsonl"
    domain: str = "default"
    relex_threshold: float = 0.85
    agent: str = "remote"
    script_path: str = ""
    endpoint_url: str = ""
    token_env: str = "DEIDKIT_API_TOKEN"
    timeout_s: float = 30.0
    retries: int = 3
    backoff_s: float = 0.5
    batch_size: int = 1
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "entity_types", tuple(self.entity_types))
        if self.agent not in ("remote", "scripted", "heuristic"):
            raise ConfigError(f"agent must be remote, scripted or heuristic, not {self.agent!r}")
        if self.batch_size < 1 or self.max_workers < 1:
            raise ConfigError("batch_size and max_workers must be >= 1")
        if self.margin_s < 0 or self.min_gap_s < 0:
            raise ConfigError("margin_s and min_gap_s must be >= 0")
        if not 0 <= self.relex_threshold <= 1:
            raise ConfigError("relex_threshold must lie in [0, 1]")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")
        try:
            self.extraction()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(
            chunk_size_words=self.chunk_size_words,
            passes=self.passes,
            overlap_words=self.overlap_words,
            entity_types=self.entity_types,
            retries=self.retries,
            backoff_s=self.backoff_s,
        )

    def audio(self) -> AudioConfig:
        return AudioConfig(
            margin_s=self.margin_s,
            min_gap_s=self.min_gap_s,
            vad=VadConfig(floor=self.vad_floor),
            extraction=self.extraction(),
            retries=self.retries,
            backoff_s=self.backoff_s,
        )

    def endpoint(self) -> EndpointSettings:
        return EndpointSettings(self.endpoint_url, self.token_env, self.timeout_s, self.retries, self.backoff_s)

    @property
    def word_budget(self) -> int:
        return self.chunk_size_words * self.batch_size


def domain_key(env: Mapping[str, str] | None = None) -> bytes:
    env = os.environ if env is None else env
    return env.get(DOMAIN_KEY_ENV, "").encode("utf-8")


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(name: str, value: Any) -> Any:
    default = _FIELDS[name].default
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                v = value.strip().lower()
                if v not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                    raise ValueError(value)
                return v in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                return tuple(t.strip() for t in value.split(",") if t.strip())
            return tuple(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}") from None


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: unreadable config ({type(exc).__name__})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be an object")
    for k in data:
        if any(w in k.lower() for w in _SECRET_WORDS) and k != "token_env":
            raise ConfigError(f"{path}: secrets are not allowed in config files ({k!r}); use environment variables")
        if k not in _FIELDS:
            raise ConfigError(f"{path}: unknown config field {k!r}")
    return data


def load_config(
    path: str | Path | None = None,
    flags: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> PipelineConfig:
    env = os.environ if env is None else env
    merged: dict[str, Any] = {}
    if path:
        merged.update(read_config_file(path))
    for k, v in (flags or {}).items():
        if v is not None:
            if k not in _FIELDS:
                raise ConfigError(f"unknown config field {k!r}")
            merged[k] = v
    for name in _FIELDS:
        var = ENV_PREFIX + name.upper()
        if var in env and var != DOMAIN_KEY_ENV:
            merged[name] = env[var]
    return replace(PipelineConfig(), **{k: _coerce(k, v) for k, v in merged.items()})
