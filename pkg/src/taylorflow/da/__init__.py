"""Differential algebra: truncated multivariate Taylor polynomials."""

from taylorflow.da.context import DAContext, MultiIndex
from taylorflow.da.matrix import (
    PolyArray,
    eval_mat,
    eval_vec,
    gradient,
    hessian,
    jacobian,
    matmul,
    polymat_inverse,
    quadratic_form,
)
from taylorflow.da.poly import (
    INTRINSICS,
    TruncatedPoly,
    add,
    apply_intrinsic,
    cos,
    eval_poly,
    exp,
    log,
    make_var,
    mul,
    partial,
    power,
    recip,
    scale,
    sin,
    sqrt,
    truncate,
)

PolyVec = PolyArray
PolyMat = PolyArray

__all__ = [
    "DAContext",
    "INTRINSICS",
    "MultiIndex",
    "PolyArray",
    "PolyMat",
    "PolyVec",
    "TruncatedPoly",
    "add",
    "apply_intrinsic",
    "cos",
    "eval_mat",
    "eval_poly",
    "eval_vec",
    "exp",
    "gradient",
    "hessian",
    "jacobian",
    "log",
    "make_var",
    "matmul",
    "mul",
    "partial",
    "polymat_inverse",
    "power",
    "quadratic_form",
    "recip",
    "scale",
    "sin",
    "sqrt",
    "truncate",
]
