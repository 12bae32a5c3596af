"""
Measurement models with a registry.

A model's ``h`` is written once against the dispatching intrinsics in
``taylorflow.da`` so the same code evaluates on floats, on batches of states
(grid oracle) and on polynomial vectors (DA expansion).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np

from taylorflow import da
from taylorflow.da import DAContext, PolyArray, TruncatedPoly
from taylorflow.errors import ConfigError
from taylorflow.numerics import as_sym_matrix, is_positive_definite


class MeasurementModel(ABC):
    """Nonlinear measurement y = h(x) + v with v ~ N(0, R) and observed y_obs."""

    type_name: str = "base"

    def __init__(self, R: Any, y_obs: Any) -> None:
        R = as_sym_matrix(np.atleast_2d(np.asarray(R, dtype=float)), "R")
        if not is_positive_definite(R):
            raise ConfigError("Measurement noise covariance R must be positive definite")
        y_obs = np.atleast_1d(np.asarray(y_obs, dtype=float))
        if y_obs.shape != (R.shape[0],):
            raise ConfigError(
                f"y_obs has shape {y_obs.shape}, expected ({R.shape[0]},) to match R"
            )
        self.R = R
        self.y_obs = y_obs
        self.R_inv = np.linalg.inv(R)

    @property
    def mdim(self) -> int:
        return len(self.y_obs)

    @property
    @abstractmethod
    def state_dim(self) -> int | None:
        """State dimension the model requires, or None if any."""

    @abstractmethod
    def h(self, xs: Sequence[Any]) -> list[Any]:
        """Measurement components from state components.

        ``xs`` holds one entry per state axis: floats, arrays of equal shape, or
        TruncatedPoly. Returns one entry per measurement axis of the same kind.
        """

    @abstractmethod
    def params(self) -> dict[str, Any]:
        """JSON-ready parameters for round-tripping."""

    def _check_state(self, n: int) -> None:
        if self.state_dim is not None and n != self.state_dim:
            raise ConfigError(
                f"{self.type_name} model expects state dimension {self.state_dim}, got {n}"
            )

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check_state(len(x))
        return np.array([float(v) for v in self.h(list(x))])

    def evaluate_many(self, xs: np.ndarray) -> np.ndarray:
        """h at each row of an (N, n) array, shape (N, m)."""
        xs = np.asarray(xs, dtype=float)
        self._check_state(xs.shape[1])
        cols = self.h([xs[:, i] for i in range(xs.shape[1])])
        return np.stack(
            [np.broadcast_to(np.asarray(c, dtype=float), xs.shape[:1]) for c in cols],
            axis=1,
        )

    def expand(
        self, center: np.ndarray, ctx: DAContext, order: int | None = None
    ) -> PolyArray:
        """y(dx) = h(center + dx) as a poly vector, truncated at ``order`` if given."""
        center = np.asarray(center, dtype=float)
        self._check_state(len(center))
        if len(center) != ctx.nvars:
            raise ConfigError(
                f"Expansion center has dimension {len(center)}, context has {ctx.nvars}"
            )
        xs = [da.make_var(ctx, i, float(c)) for i, c in enumerate(center)]
        ys = [
            y if isinstance(y, TruncatedPoly) else TruncatedPoly.constant(ctx, float(y))
            for y in self.h(xs)
        ]
        if order is not None and order < ctx.order:
            ys = [da.truncate(y, order) for y in ys]
        return PolyArray.from_polys(ys)

    def linearize(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(h(x), H) with H the Jacobian from an order-1 expansion at x."""
        x = np.asarray(x, dtype=float)
        y = self.expand(x, DAContext(len(x), 1))
        return y.constant(), y.array[:, 1:].copy()

    def expand_many(
        self, centers: np.ndarray, ctx: DAContext, order: int | None = None
    ) -> np.ndarray:
        """``expand`` at every row of ``centers`` at once, shape (B, m, M).

        Raises DomainError if any center is singular; callers fall back to
        per-center expansion to find out which.
        """
        centers = np.asarray(centers, dtype=float)
        count, n = centers.shape
        self._check_state(n)
        if n != ctx.nvars:
            raise ConfigError(f"Expansion centers have dimension {n}, context has {ctx.nvars}")
        xs = [da.make_var(ctx, i, centers[:, i]) for i in range(n)]
        out = np.zeros((count, self.mdim, ctx.size))
        for k, y in enumerate(self.h(xs)):
            if isinstance(y, TruncatedPoly):
                out[:, k] = y.array
            else:
                out[:, k, 0] = y
        if order is not None and order < ctx.order:
            out[..., ctx.tables.degrees > order] = 0.0
        return out

    def linearize_many(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched ``linearize``: h at each row, shape (B, m), and Jacobians (B, m, n)."""
        xs = np.asarray(xs, dtype=float)
        y = self.expand_many(xs, DAContext(xs.shape[1], 1))
        return y[..., 0].copy(), y[..., 1:].copy()

    def log_likelihood(self, xs: np.ndarray) -> np.ndarray:
        """Gaussian log-likelihood at each row of xs, normalization dropped."""
        r = self.evaluate_many(xs) - self.y_obs[None, :]
        return -0.5 * np.einsum("ni,ij,nj->n", r, self.R_inv, r)

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.type_name,
            "params": self.params(),
            "R": self.R.tolist(),
            "y_obs": self.y_obs.tolist(),
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MeasurementModel):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params()}, y_obs={self.y_obs.tolist()})"


class RangeModel(MeasurementModel):
    """Range to a sensor: h(x) = ||x - sensor||, sensor at the origin by default."""

    type_name = "range"

    def __init__(
        self, R: Any, y_obs: Any, sensor: Sequence[float] | None = None
    ) -> None:
        super().__init__(R, y_obs)
        if self.mdim != 1:
            raise ConfigError("range model produces a scalar measurement")
        self.sensor = None if sensor is None else np.asarray(sensor, dtype=float)

    @property
    def state_dim(self) -> int | None:
        return None if self.sensor is None else len(self.sensor)

    def h(self, xs: Sequence[Any]) -> list[Any]:
        sensor = np.zeros(len(xs)) if self.sensor is None else self.sensor
        total: Any = 0.0
        for x, s in zip(xs, sensor):
            d = x - float(s)
            total = total + d * d
        return [da.sqrt(total)]

    def params(self) -> dict[str, Any]:
        return {} if self.sensor is None else {"sensor": self.sensor.tolist()}


class AffineModel(MeasurementModel):
    """Affine measurement h(x) = H x + b."""

    type_name = "affine"

    def __init__(self, R: Any, y_obs: Any, H: Any, b: Any = None) -> None:
        super().__init__(R, y_obs)
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[0] != self.mdim:
            raise ConfigError(f"H has {H.shape[0]} rows, measurement dimension is {self.mdim}")
        b = np.zeros(self.mdim) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
        if b.shape != (self.mdim,):
            raise ConfigError(f"b has shape {b.shape}, expected ({self.mdim},)")
        self.H = H
        self.b = b

    @property
    def state_dim(self) -> int | None:
        return self.H.shape[1]

    def h(self, xs: Sequence[Any]) -> list[Any]:
        out = []
        for row, offset in zip(self.H, self.b):
            acc: Any = float(offset)
            for coef, x in zip(row, xs):
                if coef != 0.0:
                    acc = acc + float(coef) * x
            out.append(acc)
        return out

    def params(self) -> dict[str, Any]:
        return {"H": self.H.tolist(), "b": self.b.tolist()}


@dataclass
class ModelInfo:
    """A measurement model type that scenario files can name."""

    name: str
    description: str
    factory: Callable[..., MeasurementModel]


MODEL_REGISTRY: dict[str, ModelInfo] = {
    "range": ModelInfo(
        name="range",
        description="Euclidean distance to a sensor (origin by default)",
        factory=RangeModel,
    ),
    "affine": ModelInfo(
        name="affine",
        description="Linear map plus offset, h(x) = H x + b",
        factory=AffineModel,
    ),
}


def build_model(data: dict[str, Any]) -> MeasurementModel:
    """Construct a model from its ``{type, params, R, y_obs}`` mapping."""
    try:
        kind = data["type"]
        R = data["R"]
        y_obs = data["y_obs"]
    except KeyError as e:
        raise ConfigError(f"Measurement model is missing field {e}") from e
    if kind not in MODEL_REGISTRY:
        available = list(MODEL_REGISTRY.keys())
        raise ConfigError(f"Unknown model type: {kind}. Available: {available}")
    params = data.get("params") or {}
    try:
        return MODEL_REGISTRY[kind].factory(R=R, y_obs=y_obs, **params)
    except TypeError as e:
        raise ConfigError(f"Invalid parameters for {kind} model: {e}") from e
