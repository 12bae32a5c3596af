"""
Shared types for flow fields.

A flow field maps a particle state and pseudo-time lambda to a drift f and a
diffusion Q. Fields receive ``begin_step(lam)`` once per lambda step before any
particle is evaluated, which lets DAPFFv1 build its polynomials once per step.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, ClassVar

import numpy as np

from taylorflow.da import DAContext, PolyArray
from taylorflow.errors import ConfigError, InvalidOrderError, NumericalError
from taylorflow.models import MeasurementModel
from taylorflow.numerics import as_sym_matrix, is_positive_definite, sym_inverse


@dataclass(frozen=True, eq=False)
class GaussianPrior:
    """Prior mean and covariance of the state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = as_sym_matrix(self.cov, "prior covariance")
        if cov.shape != (len(mean), len(mean)):
            raise ConfigError(
                f"Prior covariance has shape {cov.shape}, expected ({len(mean)}, {len(mean)})"
            )
        if not np.all(np.isfinite(mean)):
            raise ConfigError("Prior mean has non-finite entries")
        if not is_positive_definite(cov):
            raise ConfigError("Prior covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @cached_property
    def precision(self) -> np.ndarray:
        return sym_inverse(self.cov)

    @classmethod
    def from_ensemble(
        cls, states: np.ndarray, mean: np.ndarray | None = None
    ) -> GaussianPrior:
        """Prior with covariance estimated from particles.

        The mean defaults to the sample mean; pass ``mean`` to keep a given one.
        """
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or len(states) < 2:
            raise ConfigError("At least two particles are needed to estimate a covariance")
        cov = np.cov(states, rowvar=False, ddof=1).reshape(states.shape[1], states.shape[1])
        centre = states.mean(axis=0) if mean is None else mean
        return cls(centre, 0.5 * (cov + cov.T))

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GaussianPrior):
            return NotImplemented
        return bool(
            np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)
        )

    def __hash__(self) -> int:
        return hash((self.mean.tobytes(), self.cov.tobytes()))


@dataclass
class FlowEval:
    """Drift per unit lambda and diffusion matrix at one particle."""

    drift: np.ndarray
    diffusion: np.ndarray

    @classmethod
    def drift_only(cls, drift: np.ndarray) -> FlowEval:
        drift = np.asarray(drift, dtype=float)
        return cls(drift, np.zeros((len(drift), len(drift))))


@dataclass
class BatchEval:
    """Field values for a whole ensemble; rows of failed particles are zero."""

    drift: np.ndarray  # (N, n)
    diffusion: np.ndarray | None  # (N, n, n), None when not requested
    failed: np.ndarray  # (N,) bool
    errors: list[str] = field(default_factory=list)

    @classmethod
    def empty(cls, count: int, dim: int, with_diffusion: bool) -> BatchEval:
        return cls(
            drift=np.zeros((count, dim)),
            diffusion=np.zeros((count, dim, dim)) if with_diffusion else None,
            failed=np.zeros(count, dtype=bool),
        )


@dataclass(frozen=True)
class FlowKind:
    """A flow name plus, for the DA flows, its expansion order."""

    name: str
    order: int | None = None

    def __post_init__(self) -> None:
        from taylorflow.flows.registry import FLOW_REGISTRY

        if self.name not in FLOW_REGISTRY:
            available = list(FLOW_REGISTRY.keys())
            raise ConfigError(f"Unknown flow: {self.name}. Available: {available}")
        info = FLOW_REGISTRY[self.name]
        if not info.uses_order:
            if self.order is not None:
                raise InvalidOrderError(f"Flow '{self.name}' takes no expansion order")
            return
        if self.order is None or int(self.order) != self.order:
            raise InvalidOrderError(f"Flow '{self.name}' needs an integer order")
        info.check_order(int(self.order))

    @classmethod
    def of(cls, name: str, order: int | None = None) -> FlowKind:
        """Build a kind, dropping the order for flows that have none and
        filling in the default for those that need one."""
        from taylorflow.flows.registry import FLOW_REGISTRY

        info = FLOW_REGISTRY.get(name)
        if info is None:
            return cls(name, order)
        if not info.uses_order:
            return cls(name)
        return cls(name, info.default_order if order is None else int(order))

    @classmethod
    def parse(cls, text: str) -> FlowKind:
        """Parse ``name`` or ``name:order``, e.g. ``dapff-v1:8``."""
        name, _, order = text.strip().partition(":")
        if not order:
            return cls.of(name)
        try:
            value = int(order)
        except ValueError as e:
            raise ConfigError(f"Invalid flow order in '{text}'") from e
        return cls.of(name, value)

    @property
    def label(self) -> str:
        return self.name if self.order is None else f"{self.name}-{self.order}"

    def __str__(self) -> str:
        return self.label


class FlowField(ABC):
    """Drift and diffusion of one flow for a fixed prior and measurement."""

    name: ClassVar[str] = "base"
    # False for zero-diffusion flows; the integrator then skips the noise term.
    stochastic: ClassVar[bool] = True

    def __init__(
        self,
        prior: GaussianPrior,
        model: MeasurementModel,
        order: int | None = None,
    ) -> None:
        self.prior = prior
        self.model = model
        self.order = order

    @property
    def kind(self) -> FlowKind:
        return FlowKind(self.name, self.order)

    def begin_step(self, lam: float) -> None:
        """Prepare for evaluations at ``lam``; may raise NumericalError."""

    @abstractmethod
    def evaluate(self, x: np.ndarray, lam: float, *, diffusion: bool = True) -> FlowEval:
        """Field at one particle state."""

    def evaluate_batch(
        self,
        states: np.ndarray,
        lam: float,
        *,
        diffusion: bool = True,
        executor: Executor | None = None,
    ) -> BatchEval:
        """Evaluate every particle, recording failures instead of raising."""
        count, dim = states.shape
        with_q = diffusion and self.stochastic
        batch = BatchEval.empty(count, dim, with_q)

        def one(i: int) -> FlowEval | NumericalError:
            try:
                return self.evaluate(states[i], lam, diffusion=with_q)
            except NumericalError as e:
                return e

        results = (
            list(executor.map(one, range(count)))
            if executor is not None
            else [one(i) for i in range(count)]
        )
        for i, res in enumerate(results):
            if isinstance(res, NumericalError):
                batch.failed[i] = True
                batch.errors.append(f"particle {i}: {res}")
                continue
            batch.drift[i] = res.drift
            if batch.diffusion is not None:
                batch.diffusion[i] = res.diffusion
        return batch


def deviation_vector(ctx: DAContext) -> PolyArray:
    """The poly vector dx = (dx_0, ..., dx_{n-1})."""
    array = np.zeros((ctx.nvars, ctx.size))
    array[np.arange(ctx.nvars), 1 + np.arange(ctx.nvars)] = 1.0
    return PolyArray(ctx, array)


def check_order(name: str, order: int, low: int, high: int | None) -> None:
    if order < low or (high is not None and order > high):
        bound = f">= {low}" if high is None else f"in [{low}, {high}]"
        raise InvalidOrderError(f"Flow '{name}' needs order {bound}, got {order}")
