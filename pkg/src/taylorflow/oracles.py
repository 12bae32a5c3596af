"""
Reference posteriors for checking the flows.

``grid_posterior`` evaluates prior times likelihood on a rectangular grid and
normalizes numerically. ``kalman_update`` is the closed-form answer for affine
measurements. ``energy_distance`` compares an ensemble with samples from either.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import multivariate_normal

from taylorflow.errors import ConfigError, GridResolutionError, NotAffineError
from taylorflow.flows.base import GaussianPrior
from taylorflow.models import AffineModel, MeasurementModel
from taylorflow.numerics import GRID, RngStream, symmetrize
from taylorflow.scenarios import GridSpec, Scenario

logger = logging.getLogger(__name__)

# Largest probability mass allowed on the grid's outer ring of points.
BOUNDARY_MASS_TOL = 1e-3
# Largest probability mass allowed in a single cell.
CELL_MASS_TOL = 0.25
# Half-width, in prior standard deviations, of the default grid.
DEFAULT_SIGMAS = 6.0
DEFAULT_RESOLUTION = 400


@dataclass(frozen=True, eq=False)
class GridPosterior:
    """Normalized posterior density on a grid, with quadrature moments."""

    grid: GridSpec
    density: np.ndarray  # shape = grid.resolution

    @property
    def spacing(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / (r - 1) for (lo, hi), r in zip(self.grid.bounds, self.grid.resolution)]
        )

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @cached_property
    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.grid.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def masses(self) -> np.ndarray:
        """Probability mass per grid point, flattened in ``points`` order."""
        return self.density.ravel() * self.cell_volume

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @cached_property
    def mean(self) -> np.ndarray:
        return self.masses @ self.points

    @cached_property
    def cov(self) -> np.ndarray:
        centered = self.points - self.mean[None, :]
        return symmetrize((centered * self.masses[:, None]).T @ centered)

    def mass_where(self, mask: np.ndarray) -> float:
        """Total mass of the grid points selected by a flattened boolean mask."""
        return float(self.masses[np.asarray(mask, dtype=bool)].sum())

    def sample(self, n: int, rng: RngStream) -> np.ndarray:
        """Draw n points: pick cells by mass, then jitter uniformly within the cell."""
        gen = rng.generator()
        probs = self.masses / self.masses.sum()
        idx = gen.choice(len(probs), size=n, p=probs)
        jitter = (gen.random((n, self.grid.dim)) - 0.5) * self.spacing[None, :]
        return self.points[idx] + jitter


def default_grid(prior: GaussianPrior, resolution: int = DEFAULT_RESOLUTION) -> GridSpec:
    """Box of +/- 6 prior standard deviations around the prior mean."""
    sigma = np.sqrt(np.diag(prior.cov))
    bounds = tuple(
        (float(m - DEFAULT_SIGMAS * s), float(m + DEFAULT_SIGMAS * s))
        for m, s in zip(prior.mean, sigma)
    )
    return GridSpec(bounds, (resolution,) * prior.dim)


def grid_posterior(scenario: Scenario, grid: GridSpec | None = None) -> GridPosterior:
    """Posterior of ``scenario`` on ``grid`` (scenario grid, else a default box).

    Raises GridResolutionError when the grid is too coarse or misses mass.
    """
    box = grid or scenario.grid or default_grid(scenario.prior)
    if box.dim != scenario.dim:
        raise ConfigError(f"Grid has {box.dim} axes, state dimension is {scenario.dim}")
    mesh = np.meshgrid(*box.axes(), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)

    prior = scenario.prior
    log_post = multivariate_normal(prior.mean, prior.cov).logpdf(points)
    log_post = np.atleast_1d(log_post) + scenario.model.log_likelihood(points)
    if not np.all(np.isfinite(log_post)):
        raise GridResolutionError("Log posterior is not finite on the grid")
    weights = np.exp(log_post - log_post.max())

    cell = float(
        np.prod([(hi - lo) / (r - 1) for (lo, hi), r in zip(box.bounds, box.resolution)])
    )
    total = weights.sum() * cell
    if not np.isfinite(total) or total <= 0.0:
        raise GridResolutionError("Grid posterior could not be normalized")
    density = (weights / total).reshape(box.resolution)
    posterior = GridPosterior(box, density)

    boundary = _boundary_mask(box.resolution)
    edge_mass = float(posterior.masses[boundary.ravel()].sum())
    if edge_mass > BOUNDARY_MASS_TOL:
        raise GridResolutionError(
            f"Grid misses posterior mass: {edge_mass:.3g} on the boundary; widen the bounds"
        )
    peak = float(posterior.masses.max())
    if peak > CELL_MASS_TOL:
        raise GridResolutionError(
            f"Grid too coarse: one cell holds {peak:.3g} of the mass; raise the resolution"
        )
    logger.debug("Grid posterior on %s: boundary mass %.3g", box.resolution, edge_mass)
    return posterior


def _boundary_mask(shape: tuple[int, ...]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        index: list[slice | int] = [slice(None)] * len(shape)
        index[axis] = 0
        mask[tuple(index)] = True
        index[axis] = -1
        mask[tuple(index)] = True
    return mask


def kalman_update(
    prior: GaussianPrior | Scenario, model: MeasurementModel | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Linear-Gaussian posterior mean and covariance (Joseph form)."""
    if isinstance(prior, Scenario):
        prior, model = prior.prior, prior.model
    if not isinstance(model, AffineModel):
        raise NotAffineError(
            f"Kalman update needs an affine measurement model, got {type(model).__name__}"
        )
    P, H = prior.cov, model.H
    innovation_cov = H @ P @ H.T + model.R
    gain = np.linalg.solve(innovation_cov, H @ P).T
    mean = prior.mean + gain @ (model.y_obs - H @ prior.mean - model.b)
    joseph = np.eye(prior.dim) - gain @ H
    cov = joseph @ P @ joseph.T + gain @ model.R @ gain.T
    return mean, symmetrize(cov)


def _mean_distance(a: np.ndarray, b: np.ndarray, chunk: int) -> float:
    total = 0.0
    for start in range(0, len(a), chunk):
        total += float(cdist(a[start : start + chunk], b).sum())
    return total / (len(a) * len(b))


def energy_distance(x: np.ndarray, y: np.ndarray, *, chunk: int = 512) -> float:
    """Energy distance sqrt(2 E|X-Y| - E|X-X'| - E|Y-Y'|) between two samples."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ConfigError(f"Samples have dimensions {x.shape[1]} and {y.shape[1]}")
    cross = _mean_distance(x, y, chunk)
    within_x = _mean_distance(x, x, chunk)
    within_y = _mean_distance(y, y, chunk)
    return float(np.sqrt(max(2.0 * cross - within_x - within_y, 0.0)))


def grid_samples(posterior: GridPosterior, n: int, seed: int) -> np.ndarray:
    """Reference sample of the grid posterior for energy-distance comparisons."""
    return posterior.sample(n, RngStream(seed=seed, purpose=GRID))


class EnergyScorer:
    """Energy distance to a fixed reference sample, with its self term cached."""

    def __init__(self, reference: np.ndarray, *, chunk: int = 512) -> None:
        self.reference = np.atleast_2d(np.asarray(reference, dtype=float))
        self.chunk = chunk
        self._self_term = _mean_distance(self.reference, self.reference, chunk)

    def __call__(self, sample: np.ndarray) -> float:
        x = np.atleast_2d(np.asarray(sample, dtype=float))
        if x.shape[1] != self.reference.shape[1]:
            raise ConfigError(
                f"Samples have dimensions {x.shape[1]} and {self.reference.shape[1]}"
            )
        cross = _mean_distance(x, self.reference, self.chunk)
        within = _mean_distance(x, x, self.chunk)
        return float(np.sqrt(max(2.0 * cross - within - self._self_term, 0.0)))
