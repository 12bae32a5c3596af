"""
Experiment runner: one update, flow comparisons and order sweeps.

``run_experiment`` writes into its output directory:

    initial.csv       ensemble before the update
    final.csv         ensemble after the update
    trajectory.jsonl  per-step snapshots (only when recording)
    summary.json      statistics, residuals and diagnostics
    plot.svg          particles, pathways and the grid posterior contour

Wall time goes into summary.json only when timing is requested, so repeated
runs with one seed produce identical bytes.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from taylorflow.ensemble import ParticleEnsemble, ensemble_stats, sample_prior
from taylorflow.errors import ConfigError, GridResolutionError
from taylorflow.flows import FlowKind, GaussianPrior
from taylorflow.integrator import FlowConfig, FlowTrajectory, flow_update
from taylorflow.oracles import EnergyScorer, GridPosterior, grid_posterior, grid_samples
from taylorflow.plotting import plot_update
from taylorflow.scenarios import GridSpec, Scenario

logger = logging.getLogger(__name__)

PRIOR_COV_SOURCES = ("given", "ensemble")
METRICS = ("energy",)
DEFAULT_SWEEP_ORDERS = {"dapff-v1": (2, 3, 4, 6, 8, 10), "dapff-v2": (1, 2, 3)}


@dataclass
class ExperimentReport:
    kind: FlowKind
    initial: ParticleEnsemble
    final: ParticleEnsemble
    trajectory: FlowTrajectory
    summary: dict[str, Any]
    paths: dict[str, Path] = field(default_factory=dict)


def mean_abs_residual(scenario: Scenario, states: np.ndarray) -> float:
    """E|h(x) - y_obs| over particles and measurement components."""
    residual = scenario.model.evaluate_many(states) - scenario.model.y_obs[None, :]
    return float(np.mean(np.abs(residual)))


def _ensemble_summary(scenario: Scenario, e: ParticleEnsemble) -> dict[str, Any]:
    out: dict[str, Any] = {"mean_abs_residual": mean_abs_residual(scenario, e.states)}
    if e.size >= 2:
        mean, cov = ensemble_stats(e)
        out["mean"] = mean.tolist()
        out["cov"] = cov.tolist()
    else:
        out["mean"] = e.states.mean(axis=0).tolist()
    return out


def update_prior(
    scenario: Scenario, initial: ParticleEnsemble, prior_cov: str
) -> GaussianPrior:
    """Prior used by the flow: the scenario's, or re-estimated from the particles."""
    if prior_cov not in PRIOR_COV_SOURCES:
        raise ConfigError(f"prior_cov must be one of {list(PRIOR_COV_SOURCES)}, got {prior_cov!r}")
    if prior_cov == "ensemble":
        return GaussianPrior.from_ensemble(initial.states)
    return scenario.prior


def _try_grid(scenario: Scenario, grid: GridSpec | None) -> GridPosterior | None:
    try:
        return grid_posterior(scenario, grid)
    except GridResolutionError as e:
        logger.warning("Skipping grid posterior: %s", e)
        return None


def run_experiment(
    scenario: Scenario,
    kind: FlowKind,
    cfg: FlowConfig,
    out_dir: str | Path,
    *,
    particles: int | None = None,
    initial: ParticleEnsemble | None = None,
    prior_cov: str = "given",
    grid: GridSpec | None = None,
    plot: bool = True,
    timing: bool = False,
) -> ExperimentReport:
    """Sample (or take) an initial ensemble, update it, and write the report files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = scenario.defaults.particles if particles is None else particles
    if initial is None:
        initial = sample_prior(scenario.prior, n, cfg.seed)
    prior = update_prior(scenario, initial, prior_cov)

    started = time.perf_counter()
    final, trajectory = flow_update(initial, kind, prior, scenario.model, cfg)
    elapsed = time.perf_counter() - started

    paths = {"initial": out / "initial.csv", "final": out / "final.csv"}
    initial.to_csv(paths["initial"])
    final.to_csv(paths["final"])
    if cfg.record_trajectories:
        paths["trajectory"] = out / "trajectory.jsonl"
        trajectory.write_jsonl(paths["trajectory"])

    summary: dict[str, Any] = {
        "scenario": scenario.name,
        "flow": kind.name,
        "order": kind.order,
        "particles": initial.size,
        "dlambda": cfg.dlambda,
        "substeps": cfg.substeps,
        "steps": len(trajectory.steps),
        "diffusion": cfg.diffusion,
        "seed": cfg.seed,
        "prior_cov": prior_cov,
        "initial": _ensemble_summary(scenario, initial),
        "final": _ensemble_summary(scenario, final),
        "diagnostics": trajectory.totals(),
    }
    if timing:
        summary["wall_time_s"] = elapsed
        logger.info("%s finished in %.3f s", kind.label, elapsed)

    if plot:
        posterior = _try_grid(scenario, grid)
        paths["plot"] = plot_update(
            out / "plot.svg",
            initial.states,
            final.states,
            title=f"{scenario.name}: {kind.label}",
            pathways=trajectory.snapshots or None,
            posterior=posterior,
            axes=grid or scenario.grid,
        )

    paths["summary"] = out / "summary.json"
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, path in paths.items():
        logger.info("Wrote %s: %s", name, path)
    return ExperimentReport(kind, initial, final, trajectory, summary, paths)


@dataclass
class ComparisonRow:
    flow: str
    order: int | None
    energy_distance: float
    mean_abs_residual: float
    frozen: int
    clamps: int
    diffusion_failures: int

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def _scorer(
    scenario: Scenario, grid: GridSpec | None, samples: int, seed: int
) -> EnergyScorer:
    posterior = grid_posterior(scenario, grid)
    return EnergyScorer(grid_samples(posterior, samples, seed))


def _row(
    scenario: Scenario,
    kind: FlowKind,
    initial: ParticleEnsemble,
    cfg: FlowConfig,
    scorer: EnergyScorer,
    prior: GaussianPrior,
) -> ComparisonRow:
    final, trajectory = flow_update(initial, kind, prior, scenario.model, cfg)
    return ComparisonRow(
        flow=kind.name,
        order=kind.order,
        energy_distance=scorer(final.states),
        mean_abs_residual=mean_abs_residual(scenario, final.states),
        frozen=trajectory.frozen,
        clamps=trajectory.clamps,
        diffusion_failures=trajectory.diffusion_failures,
    )


def compare_flows(
    scenario: Scenario,
    kinds: list[FlowKind],
    cfg: FlowConfig,
    *,
    particles: int | None = None,
    metric: str = "energy",
    prior_cov: str = "given",
    grid: GridSpec | None = None,
    energy_samples: int = 10_000,
) -> list[ComparisonRow]:
    """Run several flows from one common initial ensemble and score each final
    ensemble against the grid posterior.

    ``prior_cov`` picks the covariance every flow sees, as in ``run_experiment``.
    """
    if metric not in METRICS:
        raise ConfigError(f"Unknown metric: {metric}. Available: {list(METRICS)}")
    if not kinds:
        raise ConfigError("Nothing to compare: no flows given")
    n = scenario.defaults.particles if particles is None else particles
    initial = sample_prior(scenario.prior, n, cfg.seed)
    prior = update_prior(scenario, initial, prior_cov)
    scorer = _scorer(scenario, grid, energy_samples, cfg.seed)
    rows = [_row(scenario, kind, initial, cfg, scorer, prior) for kind in kinds]
    for row in rows:
        logger.info("%s-%s: energy distance %.6g", row.flow, row.order, row.energy_distance)
    return rows


def sweep_orders(
    scenario: Scenario,
    flow: str,
    cfg: FlowConfig,
    *,
    orders: list[int] | None = None,
    particles: int | None = None,
    prior_cov: str = "given",
    grid: GridSpec | None = None,
    energy_samples: int = 10_000,
) -> list[ComparisonRow]:
    """Repeat one DA flow over several orders from a common initial ensemble."""
    if orders is None:
        if flow not in DEFAULT_SWEEP_ORDERS:
            raise ConfigError(f"Flow '{flow}' has no expansion order to sweep")
        orders = list(DEFAULT_SWEEP_ORDERS[flow])
    kinds = [FlowKind(flow, order) for order in orders]
    return compare_flows(
        scenario,
        kinds,
        cfg,
        particles=particles,
        prior_cov=prior_cov,
        grid=grid,
        energy_samples=energy_samples,
    )


def format_rows(rows: list[ComparisonRow]) -> str:
    """Plain-text table of comparison rows."""
    lines = [f"{'flow':<14}{'order':>6}{'energy':>14}{'residual':>12}{'frozen':>8}{'clamps':>8}"]
    for r in rows:
        order = "-" if r.order is None else str(r.order)
        lines.append(
            f"{r.flow:<14}{order:>6}{r.energy_distance:>14.6g}{r.mean_abs_residual:>12.6g}"
            f"{r.frozen:>8}{r.clamps:>8}"
        )
    return "\n".join(lines)
