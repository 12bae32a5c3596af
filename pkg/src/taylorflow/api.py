"""
Core API for taylorflow.

A small facade over the flow registry and the integrator for callers who
just want to move an ensemble from prior to posterior.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from taylorflow.ensemble import ParticleEnsemble, sample_prior
from taylorflow.flows import FlowField, FlowKind, GaussianPrior
from taylorflow.flows.registry import FLOW_REGISTRY, FlowInfo, get_flow_info
from taylorflow.integrator import FlowConfig, FlowTrajectory, flow_update
from taylorflow.models import MeasurementModel

# Listing order: linearized flows first, then the DA flows.
DEFAULT_ORDER = ["exact", "gromov", "dapff-v1", "dapff-v2"]

FlowName = Literal["exact", "gromov", "dapff-v1", "dapff-v2"]


def available_flows() -> list[FlowInfo]:
    """Return the registered flows with their info."""
    return [FLOW_REGISTRY[name] for name in DEFAULT_ORDER if name in FLOW_REGISTRY]


def get_flow(
    name: FlowName,
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    order: int | None = None,
) -> FlowField:
    """
    Build a flow field by name.

    Args:
        name: Flow name
        prior: Gaussian prior
        model: Measurement model
        order: Expansion order for the DA flows (their default if None)

    Raises:
        ConfigError: Unknown name or unsupported order
    """
    return get_flow_info(name).create(prior, model, order)


def update(
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    flow: FlowName = "dapff-v1",
    order: int | None = None,
    particles: int | np.ndarray | ParticleEnsemble = 200,
    dlambda: float = 1.0 / 50,
    substeps: int = 20,
    diffusion: bool = True,
    seed: int = 0,
    record_trajectories: bool = False,
    workers: int = 1,
) -> tuple[ParticleEnsemble, FlowTrajectory]:
    """
    Run one particle flow measurement update.

    Args:
        particles: Particle count to sample from the prior, or the states to move
        substeps: Euler sub-steps in the first lambda step; 1 keeps the plain grid

    Examples:
        # DAPFFv1-8, drift only
        final, traj = update(prior, model, diffusion=False)

        # Move a given ensemble with DAPFFv2-3
        final, traj = update(prior, model, flow="dapff-v2", particles=states)
    """
    cfg = FlowConfig(
        dlambda=dlambda,
        substeps=substeps,
        diffusion=diffusion,
        seed=seed,
        record_trajectories=record_trajectories,
        workers=workers,
    )
    if isinstance(particles, ParticleEnsemble):
        ensemble = particles
    elif isinstance(particles, np.ndarray):
        ensemble = ParticleEnsemble(particles)
    else:
        ensemble = sample_prior(prior, particles, seed)
    return flow_update(ensemble, FlowKind.of(flow, order), prior, model, cfg)
