"""
Scenario definitions and their file format.

A scenario file is JSON (or YAML, by suffix):

    {
      "name": "range",
      "prior": {"mean": [...], "cov": [[...]]},
      "model": {"type": "range" | "affine", "params": {...}, "R": [[...]], "y_obs": [...]},
      "run": {"flow": "dapff-v1", "order": 8, "N": 200, "dlambda": 0.02,
              "diffusion": true, "seed": 0, "substeps": 20},
      "grid": {"bounds": [[x0, x1], [y0, y1]], "resolution": [nx, ny]}
    }

``grid`` is optional and fixes the oracle grid and plot axes. The string
``builtin:range`` names the built-in range-measurement scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from taylorflow.errors import ConfigError
from taylorflow.flows.base import FlowKind, GaussianPrior
from taylorflow.models import MeasurementModel, RangeModel, build_model

BUILTIN_PREFIX = "builtin:"


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid: (low, high) bounds and a point count per axis."""

    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    def __post_init__(self) -> None:
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        resolution = tuple(int(r) for r in self.resolution)
        if len(bounds) != len(resolution) or not bounds:
            raise ConfigError("Grid needs one resolution per bounded axis")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"Invalid grid bounds ({lo}, {hi})")
        if any(r < 2 for r in resolution):
            raise ConfigError(f"Grid resolution must be at least 2 per axis, got {resolution}")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", resolution)

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @classmethod
    def parse(cls, text: str) -> GridSpec:
        """Parse ``x0,x1,y0,y1,res`` (same resolution on both axes)."""
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 5:
            raise ConfigError(f"Grid must be x0,x1,y0,y1,res, got '{text}'")
        try:
            x0, x1, y0, y1 = (float(p) for p in parts[:4])
            res = int(parts[4])
        except ValueError as e:
            raise ConfigError(f"Invalid grid '{text}': {e}") from e
        return cls(((x0, x1), (y0, y1)), (res, res))

    def with_resolution(self, resolution: int) -> GridSpec:
        return GridSpec(self.bounds, (resolution,) * self.dim)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, r) for (lo, hi), r in zip(self.bounds, self.resolution)]

    def to_dict(self) -> dict[str, Any]:
        return {"bounds": [list(b) for b in self.bounds], "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GridSpec:
        try:
            return cls(tuple(tuple(b) for b in data["bounds"]), tuple(data["resolution"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid grid section: {e}") from e


@dataclass(frozen=True)
class RunDefaults:
    """Run settings a scenario suggests; CLI flags and config files override them."""

    flow: str = "dapff-v1"
    order: int | None = 8
    particles: int = 200
    dlambda: float = 1.0 / 50
    diffusion: bool = True
    seed: int = 0
    # Euler sub-steps in the first lambda step; later steps get fewer.
    substeps: int = 20

    def __post_init__(self) -> None:
        kind = FlowKind.of(self.flow, self.order)
        object.__setattr__(self, "order", kind.order)
        if int(self.particles) != self.particles or self.particles < 1:
            raise ConfigError(f"N must be a positive integer, got {self.particles}")
        if not 0.0 < float(self.dlambda) <= 1.0:
            raise ConfigError(f"dlambda must lie in (0, 1], got {self.dlambda}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps}")

    @property
    def kind(self) -> FlowKind:
        return FlowKind.of(self.flow, self.order)

    def to_dict(self) -> dict[str, Any]:
        return {
            "flow": self.flow,
            "order": self.order,
            "N": self.particles,
            "dlambda": self.dlambda,
            "diffusion": self.diffusion,
            "seed": self.seed,
            "substeps": self.substeps,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunDefaults:
        known = {"flow", "order", "N", "dlambda", "diffusion", "seed", "substeps"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown run fields: {sorted(unknown)}")
        base = cls()
        return cls(
            flow=data.get("flow", base.flow),
            order=data.get("order", base.order if "flow" not in data else None),
            particles=int(data.get("N", base.particles)),
            dlambda=float(data.get("dlambda", base.dlambda)),
            diffusion=bool(data.get("diffusion", base.diffusion)),
            seed=int(data.get("seed", base.seed)),
            substeps=int(data.get("substeps", base.substeps)),
        )


@dataclass(frozen=True)
class Scenario:
    """Prior, measurement model, suggested run settings and optional oracle grid."""

    prior: GaussianPrior
    model: MeasurementModel
    defaults: RunDefaults = field(default_factory=RunDefaults)
    grid: GridSpec | None = None
    name: str = "custom"

    def __post_init__(self) -> None:
        needed = self.model.state_dim
        if needed is not None and needed != self.prior.dim:
            raise ConfigError(
                f"Model expects state dimension {needed}, prior has {self.prior.dim}"
            )
        if self.grid is not None and self.grid.dim != self.prior.dim:
            raise ConfigError(
                f"Grid has {self.grid.dim} axes, state dimension is {self.prior.dim}"
            )

    @property
    def dim(self) -> int:
        return self.prior.dim

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "name": self.name,
            "prior": self.prior.to_dict(),
            "model": self.model.to_dict(),
            "run": self.defaults.to_dict(),
        }
        if self.grid is not None:
            data["grid"] = self.grid.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Scenario:
        if not isinstance(data, dict):
            raise ConfigError("Scenario must be a mapping")
        try:
            prior_data = data["prior"]
            prior = GaussianPrior(prior_data["mean"], prior_data["cov"])
            model = build_model(data["model"])
        except KeyError as e:
            raise ConfigError(f"Scenario is missing field {e}") from e
        grid = GridSpec.from_dict(data["grid"]) if data.get("grid") else None
        return cls(
            prior=prior,
            model=model,
            defaults=RunDefaults.from_dict(data.get("run") or {}),
            grid=grid,
            name=str(data.get("name", "custom")),
        )


def builtin_range_scenario() -> Scenario:
    """Range measurement of a state seen from the origin.

    Prior N((-3.5, 0), [[1, .5], [.5, 1]]); y = ||x|| + v with v ~ N(0, 0.1^2),
    observed y = 1.
    """
    return Scenario(
        prior=GaussianPrior(np.array([-3.5, 0.0]), np.array([[1.0, 0.5], [0.5, 1.0]])),
        model=RangeModel(R=[[0.01]], y_obs=[1.0]),
        defaults=RunDefaults(flow="dapff-v1", order=8, particles=200, dlambda=1.0 / 50),
        grid=GridSpec(((-4.0, 1.0), (-3.0, 3.0)), (600, 600)),
        name="range",
    )


BUILTIN_SCENARIOS = {"range": builtin_range_scenario}


def _is_yaml(path: Path) -> bool:
    return path.suffix.lower() in (".yaml", ".yml")


def load_scenario(source: str | Path) -> Scenario:
    """Load ``builtin:<name>`` or a JSON/YAML scenario file."""
    text = str(source)
    if text.startswith(BUILTIN_PREFIX):
        name = text[len(BUILTIN_PREFIX) :]
        if name not in BUILTIN_SCENARIOS:
            raise ConfigError(
                f"Unknown builtin scenario: {name}. Available: {list(BUILTIN_SCENARIOS)}"
            )
        return BUILTIN_SCENARIOS[name]()

    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"Scenario file not found: {path}")
    raw = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(raw) if _is_yaml(path) else json.loads(raw)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not parse scenario file {path}: {e}") from e
    return Scenario.from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    path = Path(path)
    data = scenario.to_dict()
    if _is_yaml(path):
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    else:
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
