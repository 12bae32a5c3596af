"""
Run configuration loader with multi-source support.

Configuration sources (in order of precedence):
1. Explicit options (CLI flags actually given, keyword arguments)
2. Environment variables (TAYLORFLOW_<SECTION>_<OPTION> or <SECTION>_<OPTION>)
3. Project-local config: ./.taylorflow/<section>.yaml
4. User config: ~/.config/taylorflow/<section>.yaml
5. Scenario file ``run`` block
6. Built-in defaults

Example usage:
    config = load_run_config("run", {"particles": 500})
    config.get_int("particles")  # 500
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from taylorflow.errors import ConfigError

KNOWN_OPTIONS = [
    "particles",
    "dlambda",
    "substeps",
    "diffusion",
    "seed",
    "order",
    "record_trajectories",
    "workers",
    "shared_noise",
    "prior_cov",
    "grid_resolution",
    "energy_samples",
]

RUN_DEFAULTS: dict[str, Any] = {
    "particles": 200,
    "dlambda": 1.0 / 50,
    "substeps": 20,
    "diffusion": True,
    "seed": 0,
    "order": None,  # the flow's default order
    "record_trajectories": False,
    "workers": 1,
    "shared_noise": True,
    "prior_cov": "given",  # or "ensemble"
    "grid_resolution": 400,
    "energy_samples": 10_000,
}


@dataclass
class RunConfig:
    """Merged options for one configuration section."""

    section: str
    options: dict[str, Any] = field(default_factory=dict)
    source: str = "defaults"

    def get(self, key: str, default: Any = None) -> Any:
        val = self.options.get(key)
        return default if val is None else val

    def get_bool(self, key: str, default: bool = False) -> bool:
        """Get a boolean value; strings like "true"/"1"/"yes"/"on" are truthy."""
        val = self.options.get(key)
        if val is None:
            return default
        if isinstance(val, bool):
            return val
        if isinstance(val, str):
            return val.lower() in ("true", "1", "yes", "on")
        return bool(val)

    def get_int(self, key: str, default: int = 0) -> int:
        val = self.options.get(key)
        if val is None:
            return default
        try:
            return int(val)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Option '{key}' must be an integer, got {val!r}") from e

    def get_float(self, key: str, default: float = 0.0) -> float:
        """Get a float value; accepts fractions such as "1/50"."""
        val = self.options.get(key)
        if val is None:
            return default
        if isinstance(val, str) and "/" in val:
            num, _, den = val.partition("/")
            try:
                return float(num) / float(den)
            except (ValueError, ZeroDivisionError) as e:
                raise ConfigError(f"Option '{key}' is not a valid fraction: {val!r}") from e
        try:
            return float(val)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Option '{key}' must be a number, got {val!r}") from e


def _find_config_file(section: str) -> Path | None:
    """Project-local file first, then the user file."""
    local_config = Path(f".taylorflow/{section}.yaml")
    if local_config.exists():
        return local_config

    user_config = Path.home() / ".config" / "taylorflow" / f"{section}.yaml"
    if user_config.exists():
        return user_config

    return None


def _load_yaml_config(path: Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    return data


def _load_env_config(section: str, known_options: list[str]) -> dict[str, Any]:
    """Read TAYLORFLOW_<SECTION>_<OPTION>, falling back to <SECTION>_<OPTION>.

    Examples:
        TAYLORFLOW_RUN_PARTICLES=500
        RUN_DIFFUSION=false
    """
    config = {}
    section_upper = section.upper().replace("-", "_")

    for option in known_options:
        option_upper = option.upper()
        for prefix in [f"TAYLORFLOW_{section_upper}_", f"{section_upper}_"]:
            val = os.environ.get(f"{prefix}{option_upper}")
            if val is not None:
                config[option] = val
                break

    return config


def load_run_config(
    section: str = "run",
    explicit_options: dict[str, Any] | None = None,
    known_options: list[str] | None = None,
    scenario_options: dict[str, Any] | None = None,
) -> RunConfig:
    """
    Load run configuration from every source.

    Args:
        section: Config section, which names the YAML file and the env prefix
        explicit_options: Options passed directly (highest priority); None values
            are ignored so unset CLI flags fall through
        known_options: Option names looked up in the environment
        scenario_options: The scenario file's suggested run settings

    Returns:
        RunConfig with built-in defaults filled in
    """
    known_options = KNOWN_OPTIONS if known_options is None else known_options
    merged: dict[str, Any] = dict(RUN_DEFAULTS)
    source = "defaults"

    if scenario_options:
        merged.update({k: v for k, v in scenario_options.items() if v is not None})
        source = "scenario"

    config_path = _find_config_file(section)
    if config_path:
        merged.update(_load_yaml_config(config_path))
        source = str(config_path)

    env_options = _load_env_config(section, known_options)
    if env_options:
        merged.update(env_options)
        source = "environment"

    explicit = {k: v for k, v in (explicit_options or {}).items() if v is not None}
    if explicit:
        merged.update(explicit)
        source = "explicit"

    return RunConfig(section=section, options=merged, source=source)
