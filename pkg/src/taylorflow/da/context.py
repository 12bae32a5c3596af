"""DA context: number of variables, truncation order, and monomial bookkeeping.

Monomials are addressed by multi-indices (exponent tuples) and stored in graded
order: by total degree first, then lexicographically descending, so that for two
variables the layout is 1, x0, x1, x0^2, x0 x1, x1^2, ...

The algebra has C(nvars + order, order) coefficients per polynomial. The engine
imposes no ceiling on the order; the coefficient count is the cost driver.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from taylorflow.errors import ConfigError

MultiIndex = tuple[int, ...]


@dataclass(frozen=True)
class MonomialTables:
    """Precomputed index tables for one (nvars, order) pair."""

    exponents: np.ndarray  # (M, nvars) int
    degrees: np.ndarray  # (M,) int
    index: dict[MultiIndex, int]
    # Truncated Cauchy product: pairs (mul_left[k], mul_right[k]) land in
    # coefficient slot mul_target[k]; mul_scatter is the matching 0/1 matrix.
    mul_left: np.ndarray
    mul_right: np.ndarray
    mul_target: np.ndarray
    mul_scatter: np.ndarray  # (P, M) float
    # partial[i] = (source slots, destination slots, integer factors)
    partial: tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...]
    # second[i][j] = same layout for d^2/dx_i dx_j, factors combined exactly
    second: tuple[tuple[tuple[np.ndarray, np.ndarray, np.ndarray], ...], ...]

    @property
    def size(self) -> int:
        return len(self.degrees)


def _graded_exponents(nvars: int, order: int) -> list[MultiIndex]:
    out: list[MultiIndex] = []
    for degree in range(order + 1):
        block = [
            e
            for e in itertools.product(range(degree, -1, -1), repeat=nvars)
            if sum(e) == degree
        ]
        out.extend(block)
    return out


def _derivative_table(
    exps: list[MultiIndex], index: dict[MultiIndex, int], shift: MultiIndex
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slots and falling-factorial factors for the derivative given by `shift`."""
    src, dst, fac = [], [], []
    for k, e in enumerate(exps):
        if any(ei < si for ei, si in zip(e, shift)):
            continue
        factor = 1
        for ei, si in zip(e, shift):
            for m in range(si):
                factor *= ei - m
        lowered = tuple(ei - si for ei, si in zip(e, shift))
        src.append(k)
        dst.append(index[lowered])
        fac.append(factor)
    return (
        np.asarray(src, dtype=np.intp),
        np.asarray(dst, dtype=np.intp),
        np.asarray(fac, dtype=float),
    )


@lru_cache(maxsize=64)
def monomial_tables(nvars: int, order: int) -> MonomialTables:
    exps = _graded_exponents(nvars, order)
    index = {e: k for k, e in enumerate(exps)}
    exponents = np.asarray(exps, dtype=np.int64).reshape(len(exps), nvars)
    degrees = exponents.sum(axis=1)

    left, right, target = [], [], []
    for a, ea in enumerate(exps):
        da = degrees[a]
        for b, eb in enumerate(exps):
            if da + degrees[b] > order:
                continue
            left.append(a)
            right.append(b)
            target.append(index[tuple(x + y for x, y in zip(ea, eb))])
    mul_left = np.asarray(left, dtype=np.intp)
    mul_right = np.asarray(right, dtype=np.intp)
    mul_target = np.asarray(target, dtype=np.intp)
    scatter = np.zeros((len(target), len(exps)))
    scatter[np.arange(len(target)), mul_target] = 1.0

    units = [tuple(int(i == j) for j in range(nvars)) for i in range(nvars)]
    partial = tuple(_derivative_table(exps, index, u) for u in units)
    second = tuple(
        tuple(
            _derivative_table(
                exps, index, tuple(x + y for x, y in zip(units[i], units[j]))
            )
            for j in range(nvars)
        )
        for i in range(nvars)
    )

    return MonomialTables(
        exponents=exponents,
        degrees=degrees,
        index=index,
        mul_left=mul_left,
        mul_right=mul_right,
        mul_target=mul_target,
        mul_scatter=scatter,
        partial=partial,
        second=second,
    )


@dataclass(frozen=True)
class DAContext:
    """Shared algebra settings: state dimension and truncation order."""

    nvars: int
    order: int

    def __post_init__(self) -> None:
        if int(self.nvars) != self.nvars or self.nvars < 1:
            raise ConfigError(f"nvars must be a positive integer, got {self.nvars}")
        if int(self.order) != self.order or self.order < 1:
            raise ConfigError(f"order must be a positive integer, got {self.order}")

    @property
    def tables(self) -> MonomialTables:
        return monomial_tables(self.nvars, self.order)

    @property
    def size(self) -> int:
        """Number of coefficients, C(nvars + order, order)."""
        return math.comb(self.nvars + self.order, self.order)

    def with_order(self, order: int) -> DAContext:
        return DAContext(self.nvars, order)

    def monomials(self, point: np.ndarray) -> np.ndarray:
        """Values of every monomial at `point`, in storage order."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.nvars,):
            raise ValueError(
                f"Point has shape {point.shape}, expected ({self.nvars},)"
            )
        return np.prod(point[None, :] ** self.tables.exponents, axis=1)

    def monomials_many(self, points: np.ndarray) -> np.ndarray:
        """Monomial values for a batch of points, shape (N, M)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.nvars:
            raise ValueError(
                f"Points have shape {points.shape}, expected (N, {self.nvars})"
            )
        return np.prod(points[:, None, :] ** self.tables.exponents[None], axis=2)
