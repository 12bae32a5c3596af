"""
Euler-Maruyama transport of an ensemble through pseudo-time lambda in [0, 1].

For each step k and particle i, with the field taken at the left endpoint:

    x <- x + f(x, lam_k) dlam_k + B(x, lam_k) sqrt(dlam_k) z,   B B^T = Q

z comes from a counter-based stream keyed by (seed, particle, step), so results
do not depend on the number of worker threads.

Each reporting step of the lambda grid may be split into equal Euler sub-steps.
The split follows a fixed schedule, about substeps * dlam / (lam_k + dlam) pieces
for the step starting at lam_k: the field's stiffness scales like 1 / lam once
the measurement dominates, so the early steps get the finest pieces. Snapshots
and diagnostics stay per reporting step; noise streams are keyed by the global
sub-step index.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from taylorflow.ensemble import ParticleEnsemble, snapshot_record, write_jsonl
from taylorflow.errors import ConfigError, NonFiniteStateError, NumericalError
from taylorflow.flows import FlowField, FlowKind, GaussianPrior, create_flow
from taylorflow.models import MeasurementModel
from taylorflow.numerics import DIFFUSION, RngStream, ldl_sqrt_many

logger = logging.getLogger(__name__)

# Tolerance when deciding whether 1/dlambda is a whole number of steps.
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class FlowConfig:
    """Integration settings for one measurement update."""

    dlambda: float = 1.0 / 50
    diffusion: bool = True
    seed: int = 0
    record_trajectories: bool = False
    workers: int = 1
    # Noise depends only on (seed, particle, step); off salts it with the flow name.
    shared_noise: bool = True
    # Sub-steps of the first reporting step; later steps get fewer (see substep_count).
    substeps: int = 1

    def __post_init__(self) -> None:
        if not (0.0 < self.dlambda <= 1.0) or not math.isfinite(self.dlambda):
            raise ConfigError(f"dlambda must lie in (0, 1], got {self.dlambda}")
        if int(self.seed) != self.seed:
            raise ConfigError(f"seed must be an integer, got {self.seed}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ConfigError(f"workers must be a positive integer, got {self.workers}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps}")

    @property
    def steps(self) -> int:
        return len(lambda_grid(self.dlambda)) - 1

    def substep_schedule(self) -> list[int]:
        """Euler sub-steps taken inside each reporting step."""
        grid = lambda_grid(self.dlambda)
        return [
            substep_count(float(grid[k]), float(grid[k + 1] - grid[k]), self.substeps)
            for k in range(len(grid) - 1)
        ]


def lambda_grid(dlambda: float) -> np.ndarray:
    """0 = lam_0 < ... < lam_K = 1 with uniform spacing; the last step may be shorter."""
    if not 0.0 < dlambda <= 1.0:
        raise ConfigError(f"dlambda must lie in (0, 1], got {dlambda}")
    count = math.ceil(1.0 / dlambda - _GRID_TOL)
    grid = np.minimum(np.arange(count + 1) * dlambda, 1.0)
    grid[-1] = 1.0
    return grid


def substep_count(lam: float, dlam: float, substeps: int) -> int:
    """Pieces for the reporting step [lam, lam + dlam]: ceil(substeps * dlam / (lam + dlam)).

    The first step gets ``substeps`` pieces, step k about substeps / (k + 1), and
    never fewer than one.
    """
    if substeps <= 1:
        return 1
    return max(1, math.ceil(substeps * dlam / (lam + dlam) - _GRID_TOL))


@dataclass
class StepDiagnostics:
    step: int
    lam: float
    dlambda: float
    substeps: int = 1
    clamps: int = 0
    # particle sub-steps held in place, including diffusion failures
    frozen: int = 0
    diffusion_failures: int = 0

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class FlowTrajectory:
    """Lambda grid, optional per-step snapshots and per-step diagnostics."""

    lambdas: np.ndarray
    snapshots: list[np.ndarray] = field(default_factory=list)
    steps: list[StepDiagnostics] = field(default_factory=list)

    @property
    def clamps(self) -> int:
        return sum(s.clamps for s in self.steps)

    @property
    def frozen(self) -> int:
        return sum(s.frozen for s in self.steps)

    @property
    def diffusion_failures(self) -> int:
        return sum(s.diffusion_failures for s in self.steps)

    def totals(self) -> dict[str, int]:
        return {
            "steps": len(self.steps),
            "clamps": self.clamps,
            "frozen": self.frozen,
            "diffusion_failures": self.diffusion_failures,
        }

    def records(self) -> list[dict[str, Any]]:
        """One record per grid point; record k carries the step that ended at lam_k."""
        out = []
        for k, states in enumerate(self.snapshots):
            diag = self.steps[k - 1].as_dict() if k > 0 else {}
            out.append(snapshot_record(self.lambdas[k], states, diag))
        return out

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            write_jsonl(self.records(), f)

    def to_json(self) -> str:
        return json.dumps(self.totals(), sort_keys=True)


def _noise_purpose(cfg: FlowConfig, flow_name: str) -> int:
    if cfg.shared_noise:
        return DIFFUSION
    return DIFFUSION | (zlib.crc32(flow_name.encode("utf-8")) << 8)


def transport(
    ensemble: ParticleEnsemble,
    flow: FlowField,
    cfg: FlowConfig,
) -> tuple[ParticleEnsemble, FlowTrajectory]:
    """Integrate an already constructed field from lambda = 0 to 1."""
    grid = lambda_grid(cfg.dlambda)
    schedule = cfg.substep_schedule()
    states = np.array(ensemble.states, dtype=float)
    count = len(states)
    use_noise = cfg.diffusion and flow.stochastic
    purpose = _noise_purpose(cfg, flow.name)
    trajectory = FlowTrajectory(lambdas=grid)
    if cfg.record_trajectories:
        trajectory.snapshots.append(states.copy())

    counter = 0
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    with pool if pool is not None else nullcontext():
        for k in range(len(grid) - 1):
            start = float(grid[k])
            dlam = float(grid[k + 1] - grid[k])
            pieces = schedule[k]
            h = dlam / pieces
            diag = StepDiagnostics(step=k, lam=start, dlambda=dlam, substeps=pieces)
            for j in range(pieces):
                lam = start + j * h
                states = _step(states, flow, lam, h, counter, use_noise, purpose, cfg, diag, pool)
                counter += 1
                bad = np.flatnonzero(~np.all(np.isfinite(states), axis=1))
                if bad.size:
                    raise NonFiniteStateError(int(bad[0]), lam)
            trajectory.steps.append(diag)
            if cfg.record_trajectories:
                trajectory.snapshots.append(states.copy())
            logger.debug(
                "step %d lambda=%.6g substeps=%d clamps=%d frozen=%d diffusion_failures=%d",
                k, start, pieces, diag.clamps, diag.frozen, diag.diffusion_failures,
            )

    label = flow.name if flow.order is None else f"{flow.name}-{flow.order}"
    logger.info(
        "%s update of %d particles over %d steps (%d sub-steps): "
        "clamps=%d frozen=%d diffusion_failures=%d",
        label, count, len(trajectory.steps), counter,
        trajectory.clamps, trajectory.frozen, trajectory.diffusion_failures,
    )
    return ParticleEnsemble(states), trajectory


def _step(
    states: np.ndarray,
    flow: FlowField,
    lam: float,
    h: float,
    counter: int,
    use_noise: bool,
    purpose: int,
    cfg: FlowConfig,
    diag: StepDiagnostics,
    pool: Executor | None,
) -> np.ndarray:
    """One Euler-Maruyama sub-step of length ``h``; ``counter`` keys the noise."""
    try:
        flow.begin_step(lam)
    except NumericalError as e:
        logger.debug("lambda=%.6g: field preparation failed, ensemble frozen: %s", lam, e)
        diag.frozen += len(states)
        return states

    batch = flow.evaluate_batch(states, lam, diffusion=use_noise, executor=pool)
    for message in batch.errors:
        logger.debug("lambda=%.6g frozen %s", lam, message)

    new_states = states + batch.drift * h
    frozen = batch.failed.copy()

    if use_noise and batch.diffusion is not None:
        active = np.flatnonzero(~frozen & np.any(batch.diffusion != 0.0, axis=(1, 2)))
        if active.size:
            roots = ldl_sqrt_many(batch.diffusion[active])
            rejected = active[roots.indefinite]
            frozen[rejected] = True
            diag.diffusion_failures += int(rejected.size)
            diag.clamps += int(roots.clamps.sum())
            scale = math.sqrt(h)
            dim = states.shape[1]

            def draw(i: int) -> np.ndarray:
                stream = RngStream(cfg.seed, particle=int(i), step=counter, purpose=purpose)
                return stream.standard_normal(dim)

            draws = pool.map(draw, active) if pool is not None else map(draw, active)
            z = np.array(list(draws))
            kicks = np.einsum("bij,bj->bi", roots.factors, scale * z)
            new_states[active] += kicks

    new_states[frozen] = states[frozen]
    diag.frozen += int(frozen.sum())
    return new_states


def flow_update(
    ensemble: ParticleEnsemble,
    kind: FlowKind,
    prior: GaussianPrior,
    model: MeasurementModel,
    cfg: FlowConfig,
) -> tuple[ParticleEnsemble, FlowTrajectory]:
    """Move the ensemble from the prior to the posterior with the chosen flow."""
    if ensemble.dim != prior.dim:
        raise ConfigError(
            f"Ensemble dimension {ensemble.dim} does not match prior dimension {prior.dim}"
        )
    flow = create_flow(kind, prior, model)
    return transport(ensemble, flow, cfg)
