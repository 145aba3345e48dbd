"""TOML configuration for the command-line tools.

Precedence is always flag > file > built-in default.  Secrets never live in
configuration: endpoint sections name an *environment variable* that holds
the API key, and that name must look like one (an inlined key fails
validation).  Unknown keys are errors so typos surface instead of silently
using defaults.  The ``[sft]`` section records the full-scale finetuning
recipe for reference by external training code; nothing in this package
executes it.
"""
from __future__ import annotations

import os
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Union

from critloop.grpo import GrpoHyper
from critloop.sandbox import ResourceLimits

_ENV_VAR_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class RoleSettings:
    """Connection and sampling settings for one model role."""

    base_url: str = "http://localhost:8000/v1"
    model: str = "default-model"
    api_key_env_var: str = ""
    temperature: float = 0.7
    max_tokens: int = 1024
    timeout_ms: int = 30000
    max_retries: int = 3

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be non-empty")
        if not self.model:
            raise ValueError("model must be non-empty")
        if self.api_key_env_var and not _ENV_VAR_NAME_RE.match(self.api_key_env_var):
            raise ValueError(
                "api_key_env_var must be an environment variable NAME "
                "(letters, digits, underscores); never put key material in a config"
            )


@dataclass(frozen=True)
class SandboxSettings:
    interpreter: tuple[str, ...] = ("python3",)
    per_case_timeout_ms: int = 5000
    max_output_bytes: int = 1_000_000

    def __post_init__(self) -> None:
        if not self.interpreter:
            raise ValueError("interpreter argv must be non-empty")

    def limits(self) -> ResourceLimits:
        return ResourceLimits(
            per_case_timeout_ms=self.per_case_timeout_ms,
            max_output_bytes=self.max_output_bytes,
        )


@dataclass(frozen=True)
class LoopSettings:
    rounds: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class SftSettings:
    """Reference recipe for full-scale critic finetuning (not executed here)."""

    learning_rate: float = 2e-5
    schedule: str = "cosine"
    batch_size: int = 256
    max_tokens: int = 2048
    epochs: int = 1
    precision: str = "bfloat16"


@dataclass(frozen=True)
class AppConfig:
    generator: RoleSettings = field(default_factory=RoleSettings)
    critic: RoleSettings = field(default_factory=RoleSettings)
    sandbox: SandboxSettings = field(default_factory=SandboxSettings)
    loop: LoopSettings = field(default_factory=LoopSettings)
    sft: SftSettings = field(default_factory=SftSettings)
    rl: GrpoHyper = field(default_factory=GrpoHyper)


_SECTION_TYPES = {
    "generator": RoleSettings,
    "critic": RoleSettings,
    "sandbox": SandboxSettings,
    "loop": LoopSettings,
    "sft": SftSettings,
    "rl": GrpoHyper,
}


def _overlay(default, section: dict, section_name: str):
    allowed = {f.name for f in fields(default)}
    unknown = set(section) - allowed
    if unknown:
        raise ValueError(
            f"unknown key(s) in [{section_name}]: {', '.join(sorted(unknown))}"
        )
    overrides = dict(section)
    if "interpreter" in overrides:
        value = overrides["interpreter"]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValueError("[sandbox] interpreter must be a list of strings")
        overrides["interpreter"] = tuple(value)
    return replace(default, **overrides)


def load_config(path: Optional[Union[str, os.PathLike]] = None) -> AppConfig:
    """Built-in defaults, overlaid with the TOML file when given."""
    config = AppConfig()
    if path is None:
        return config
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config from {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"invalid TOML in {path}: {exc}") from exc

    unknown_sections = set(data) - set(_SECTION_TYPES)
    if unknown_sections:
        raise ValueError(f"unknown section(s): {', '.join(sorted(unknown_sections))}")
    sections = {}
    for name in _SECTION_TYPES:
        default = getattr(config, name)
        if name in data:
            if not isinstance(data[name], dict):
                raise ValueError(f"[{name}] must be a table")
            sections[name] = _overlay(default, data[name], name)
        else:
            sections[name] = default
    return AppConfig(**sections)
