"""Vectors and matrices of truncated polynomials.

PolyArray stores a (rows[, cols]) arrangement of polynomials sharing one context as a
single coefficient array of shape (*shape, M). PolyVec and PolyMat are the 1-D and
2-D cases. Matrix products reuse the context's truncated-product tables, so a
polynomial matrix product costs one einsum and one scatter.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
import scipy.linalg

from taylorflow.da.context import DAContext
from taylorflow.da.poly import TruncatedPoly, _canonical
from taylorflow.errors import ContextMismatchError, SingularMatrixError

# Largest condition number accepted for the constant part of an inverted matrix.
MAX_CONDITION = 1e12
# Entry-wise symmetry tolerance for Hessians.
SYMMETRY_TOL = 1e-10


class PolyArray:
    """A vector or matrix whose entries are TruncatedPoly over one context."""

    __slots__ = ("ctx", "array")
    __array_ufunc__ = None

    def __init__(self, ctx: DAContext, array: np.ndarray) -> None:
        array = np.asarray(array, dtype=float)
        if array.ndim < 2 or array.shape[-1] != ctx.size:
            raise ValueError(
                f"Coefficient array has shape {array.shape}, "
                f"expected (..., {ctx.size})"
            )
        self.ctx = ctx
        self.array = _canonical(array)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_polys(cls, polys: Sequence[Any]) -> PolyArray:
        """Stack a (nested) sequence of TruncatedPoly into a PolyArray."""
        flat: list[TruncatedPoly] = []

        def walk(item: Any) -> Any:
            if isinstance(item, TruncatedPoly):
                flat.append(item)
                return None
            return [walk(x) for x in item]

        walk(polys)
        if not flat:
            raise ValueError("Cannot build a PolyArray from an empty sequence")
        ctx = flat[0].ctx
        for p in flat:
            if p.ctx != ctx:
                raise ContextMismatchError(f"Mixed contexts {ctx} and {p.ctx}")
        shape = _shape_of(polys)
        array = np.stack([p.array for p in flat]).reshape(*shape, ctx.size)
        return cls(ctx, array)

    @classmethod
    def from_constant(cls, ctx: DAContext, values: np.ndarray) -> PolyArray:
        values = np.asarray(values, dtype=float)
        array = np.zeros((*values.shape, ctx.size))
        array[..., 0] = values
        return cls(ctx, array)

    @classmethod
    def zeros(cls, ctx: DAContext, shape: tuple[int, ...]) -> PolyArray:
        return cls(ctx, np.zeros((*shape, ctx.size)))

    # -- shape and access -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape[:-1]

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def __len__(self) -> int:
        return self.shape[0]

    def __getitem__(self, key: Any) -> Any:
        sub = self.array[key]
        if sub.ndim == 1:
            return TruncatedPoly(self.ctx, sub)
        return PolyArray(self.ctx, sub)

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def __repr__(self) -> str:
        return (
            f"PolyArray(shape={self.shape}, n={self.ctx.nvars}, c={self.ctx.order})"
        )

    @property
    def T(self) -> PolyArray:
        if self.ndim != 2:
            raise ValueError("Transpose requires a 2-D PolyArray")
        return PolyArray(self.ctx, self.array.transpose(1, 0, 2))

    def symmetrize(self) -> PolyArray:
        """(M + M^T) / 2, entry-wise as polynomials."""
        return PolyArray(self.ctx, 0.5 * (self.array + self.T.array))

    def is_symmetric(self, tol: float = SYMMETRY_TOL) -> bool:
        return bool(np.max(np.abs(self.array - self.T.array), initial=0.0) <= tol)

    # -- arithmetic -------------------------------------------------------

    def _check(self, other: PolyArray) -> None:
        if other.ctx != self.ctx:
            raise ContextMismatchError(
                f"Cannot combine poly arrays from {self.ctx} and {other.ctx}"
            )

    def __add__(self, other: Any) -> PolyArray:
        if isinstance(other, PolyArray):
            self._check(other)
            return PolyArray(self.ctx, self.array + other.array)
        return self + PolyArray.from_constant(
            self.ctx, np.broadcast_to(np.asarray(other, dtype=float), self.shape)
        )

    __radd__ = __add__

    def __neg__(self) -> PolyArray:
        return PolyArray(self.ctx, -self.array)

    def __sub__(self, other: Any) -> PolyArray:
        return self + (-other)

    def __rsub__(self, other: Any) -> PolyArray:
        return (-self) + other

    def __mul__(self, a: float) -> PolyArray:
        return PolyArray(self.ctx, float(a) * self.array)

    __rmul__ = __mul__

    def __matmul__(self, other: Any) -> PolyArray:
        if isinstance(other, PolyArray):
            return matmul(self, other)
        return _const_matmul_right(self, np.asarray(other, dtype=float))

    def __rmatmul__(self, other: Any) -> PolyArray:
        return _const_matmul_left(np.asarray(other, dtype=float), self)

    def dot(self, other: PolyArray) -> TruncatedPoly:
        """Inner product of two poly vectors."""
        self._check(other)
        if self.ndim != 1 or other.ndim != 1 or len(self) != len(other):
            raise ValueError(
                f"dot requires equal-length vectors, got {self.shape} and {other.shape}"
            )
        t = self.ctx.tables
        products = self.array[:, t.mul_left] * other.array[:, t.mul_right]
        return TruncatedPoly(self.ctx, products.sum(axis=0) @ t.mul_scatter)

    # -- evaluation -------------------------------------------------------

    def constant(self) -> np.ndarray:
        """Constant parts, i.e. evaluation at the null deviation."""
        return np.array(self.array[..., 0])

    def eval(self, point: np.ndarray) -> np.ndarray:
        return self.array @ self.ctx.monomials(point)

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at a batch of points; result has shape (N, *shape)."""
        mono = self.ctx.monomials_many(points)
        flat = self.array.reshape(-1, self.ctx.size)
        return (mono @ flat.T).reshape(len(mono), *self.shape)


def _shape_of(nested: Any) -> tuple[int, ...]:
    if isinstance(nested, TruncatedPoly):
        return ()
    inner = {_shape_of(x) for x in nested}
    if len(inner) != 1:
        raise ValueError("Ragged nested sequence of polynomials")
    return (len(nested), *inner.pop())


def matmul(a: PolyArray, b: PolyArray) -> PolyArray:
    """Matrix-matrix, matrix-vector or vector-matrix product, truncated."""
    a._check(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.ndim + b.ndim == 2:
        raise ValueError(f"Unsupported operand shapes {a.shape} @ {b.shape}")
    t = a.ctx.tables
    left = a.array if a.ndim == 2 else a.array[None, :, :]
    right = b.array if b.ndim == 2 else b.array[:, None, :]
    if left.shape[1] != right.shape[0]:
        raise ValueError(f"Shape mismatch {a.shape} @ {b.shape}")
    contrib = np.einsum(
        "rmp,msp->rsp", left[..., t.mul_left], right[..., t.mul_right]
    )
    out = contrib @ t.mul_scatter
    if a.ndim == 1:
        out = out[0]
    elif b.ndim == 1:
        out = out[:, 0, :]
    return PolyArray(a.ctx, out)


def _const_matmul_left(c: np.ndarray, b: PolyArray) -> PolyArray:
    out = np.tensordot(c, b.array, axes=([c.ndim - 1], [0]))
    return PolyArray(b.ctx, out)


def _const_matmul_right(a: PolyArray, c: np.ndarray) -> PolyArray:
    if a.ndim == 1:
        out = np.einsum("mk,m...->...k", a.array, c)
    else:
        out = np.einsum("rmk,m...->r...k", a.array, c)
    return PolyArray(a.ctx, out)


# -- differentiation ------------------------------------------------------


def gradient(p: TruncatedPoly) -> PolyArray:
    """Column of partial derivatives d p / d dx_i."""
    ctx = p.ctx
    out = np.zeros((ctx.nvars, ctx.size))
    for i, (src, dst, fac) in enumerate(ctx.tables.partial):
        out[i, dst] = p.array[src] * fac
    return PolyArray(ctx, out)


def hessian(p: TruncatedPoly) -> PolyArray:
    """Matrix of second partials; symmetric exactly (combined integer factors)."""
    ctx = p.ctx
    n = ctx.nvars
    out = np.zeros((n, n, ctx.size))
    for i in range(n):
        for j in range(n):
            src, dst, fac = ctx.tables.second[i][j]
            out[i, j, dst] = p.array[src] * fac
    return PolyArray(ctx, out)


def jacobian(v: PolyArray) -> PolyArray:
    """J[i, j] = d v_i / d dx_j for a poly vector v."""
    if v.ndim != 1:
        raise ValueError("jacobian requires a 1-D PolyArray")
    ctx = v.ctx
    out = np.zeros((len(v), ctx.nvars, ctx.size))
    for j, (src, dst, fac) in enumerate(ctx.tables.partial):
        out[:, j, dst] = v.array[:, src] * fac
    return PolyArray(ctx, out)


def eval_vec(v: PolyArray, point: np.ndarray) -> np.ndarray:
    return v.eval(point)


def eval_mat(m: PolyArray, point: np.ndarray) -> np.ndarray:
    return m.eval(point)


def quadratic_form(v: PolyArray, weight: np.ndarray) -> TruncatedPoly:
    """v^T W v for a poly vector v and constant matrix W."""
    return v.dot(np.asarray(weight, dtype=float) @ v)


# -- inversion ------------------------------------------------------------


def polymat_inverse(m: PolyArray) -> PolyArray:
    """Invert a polynomial matrix by the nilpotent Neumann series.

    With M = M0 + N (N has no constant part),

        M^-1 = sum_{k=0..c} (-M0^-1 N)^k M0^-1

    which is exact in the truncated algebra. M0 is inverted by pivoted LU.
    """
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"polymat_inverse requires a square matrix, got {m.shape}")
    ctx = m.ctx
    m0 = m.constant()
    if not np.all(np.isfinite(m0)):
        raise SingularMatrixError("Constant part has non-finite entries")
    cond = np.linalg.cond(m0)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularMatrixError(
            f"Constant part is singular or ill-conditioned (cond={cond:.3g})"
        )
    lu = scipy.linalg.lu_factor(m0)
    m0_inv = scipy.linalg.lu_solve(lu, np.eye(m0.shape[0]))

    nilpotent = np.array(m.array)
    nilpotent[..., 0] = 0.0
    step = -(m0_inv @ PolyArray(ctx, nilpotent))

    base = PolyArray.from_constant(ctx, m0_inv)
    result = base
    for _ in range(ctx.order):
        result = base + step @ result
    return result
