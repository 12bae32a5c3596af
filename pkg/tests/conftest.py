"""Shared test fixtures and configuration for taylorflow tests."""

import os
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from taylorflow.da import DAContext, TruncatedPoly
from taylorflow.flows import GaussianPrior
from taylorflow.models import AffineModel
from taylorflow.scenarios import GridSpec, RunDefaults, Scenario, builtin_range_scenario


@pytest.fixture
def range_scenario() -> Scenario:
    """The built-in range-measurement scenario."""
    return builtin_range_scenario()


@pytest.fixture
def affine_scenario() -> Scenario:
    """A 2-D linear-Gaussian scenario with a correlated prior and a 2-row H."""
    prior = GaussianPrior(np.array([0.5, -0.3]), np.array([[1.0, 0.3], [0.3, 0.8]]))
    model = AffineModel(
        R=[[0.2, 0.05], [0.05, 0.3]],
        y_obs=[1.1, -0.4],
        H=[[1.0, 0.5], [-0.2, 1.0]],
        b=[0.1, 0.0],
    )
    return Scenario(
        prior=prior,
        model=model,
        defaults=RunDefaults(flow="gromov", order=None, particles=100, dlambda=0.05),
        grid=GridSpec(((-4.0, 4.0), (-4.0, 4.0)), (301, 301)),
        name="affine",
    )


@pytest.fixture
def random_poly() -> Callable[..., TruncatedPoly]:
    """Factory for random dense polynomials: random_poly(nvars, order, seed)."""

    def make(nvars: int, order: int, seed: int = 0) -> TruncatedPoly:
        ctx = DAContext(nvars, order)
        rng = np.random.default_rng(seed)
        return TruncatedPoly(ctx, rng.uniform(-1.0, 1.0, ctx.size))

    return make


@pytest.fixture
def isolated_env(monkeypatch):
    """Fixture that clears all TAYLORFLOW_* and RUN_* environment variables."""
    for var in [k for k in os.environ if k.startswith(("TAYLORFLOW_", "RUN_"))]:
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def isolated_config(tmp_path: Path, monkeypatch, isolated_env) -> Path:
    """Run inside tmp_path with HOME patched there and no config files.

    Returns the project-local .taylorflow directory (not yet created).
    """
    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr(Path, "home", lambda: tmp_path)
    return tmp_path / ".taylorflow"
