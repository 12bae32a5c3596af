"""Batched DA kernels: one polynomial object per particle along a leading axis.

Coefficient arrays have shape (B, *shape, M): B particles, then the vector or
matrix shape, then the M coefficients of the context. The kernels mirror the
PolyArray operations in ``taylorflow.da.matrix`` and use the same product and
derivative tables.
"""

from __future__ import annotations

import numpy as np

from taylorflow.da.context import DAContext


def deviations(ctx: DAContext, centers: np.ndarray) -> np.ndarray:
    """center + dx for each row of ``centers``, shape (B, n, M)."""
    centers = np.asarray(centers, dtype=float)
    count, n = centers.shape
    out = np.zeros((count, n, ctx.size))
    out[..., 0] = centers
    out[:, np.arange(n), 1 + np.arange(n)] = 1.0
    return out


def bmul(ctx: DAContext, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entry-wise truncated product of two coefficient arrays."""
    t = ctx.tables
    return (a[..., t.mul_left] * b[..., t.mul_right]) @ t.mul_scatter


def bmatmul(ctx: DAContext, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, r, m, M) @ (B, m, s, M); a (B, m, M) right operand is a vector."""
    t = ctx.tables
    vector = b.ndim == 3
    right = b[:, :, None, :] if vector else b
    contrib = np.einsum("brmp,bmsp->brsp", a[..., t.mul_left], right[..., t.mul_right])
    out = contrib @ t.mul_scatter
    return out[:, :, 0, :] if vector else out


def bdot(ctx: DAContext, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner products of (B, k, M) poly vectors, shape (B, M)."""
    t = ctx.tables
    products = a[..., t.mul_left] * b[..., t.mul_right]
    return products.sum(axis=1) @ t.mul_scatter


def bquadratic_form(ctx: DAContext, v: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """v^T W v for (B, k, M) poly vectors and one constant (k, k) matrix."""
    weighted = np.einsum("ij,bjm->bim", np.asarray(weight, dtype=float), v)
    return bdot(ctx, v, weighted)


def bgradient(ctx: DAContext, p: np.ndarray) -> np.ndarray:
    out = np.zeros((p.shape[0], ctx.nvars, ctx.size))
    for i, (src, dst, fac) in enumerate(ctx.tables.partial):
        out[:, i, dst] = p[:, src] * fac
    return out


def bhessian(ctx: DAContext, p: np.ndarray) -> np.ndarray:
    n = ctx.nvars
    out = np.zeros((p.shape[0], n, n, ctx.size))
    for i in range(n):
        for j in range(n):
            src, dst, fac = ctx.tables.second[i][j]
            out[:, i, j, dst] = p[:, src] * fac
    return out


def bjacobian(ctx: DAContext, v: np.ndarray) -> np.ndarray:
    """J[b, i, j] = d v_i / d dx_j for (B, k, M) poly vectors."""
    count, rows = v.shape[:2]
    out = np.zeros((count, rows, ctx.nvars, ctx.size))
    for j, (src, dst, fac) in enumerate(ctx.tables.partial):
        out[:, :, j, dst] = v[:, :, src] * fac
    return out


def binverse(ctx: DAContext, m: np.ndarray, m0_inv: np.ndarray) -> np.ndarray:
    """Neumann-series inverses of (B, n, n, M) poly matrices.

    ``m0_inv`` holds the inverses of the constant parts, computed and checked by
    the caller.
    """
    nilpotent = np.array(m)
    nilpotent[..., 0] = 0.0
    step = -np.einsum("bij,bjkm->bikm", m0_inv, nilpotent)
    base = np.zeros(m.shape)
    base[..., 0] = m0_inv
    result = base
    for _ in range(ctx.order):
        result = base + bmatmul(ctx, step, result)
    return result
