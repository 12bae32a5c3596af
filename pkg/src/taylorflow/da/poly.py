"""Truncated multivariate Taylor polynomials.

A TruncatedPoly is an immutable coefficient vector over a DAContext. Every product
and intrinsic truncates eagerly at the context order, so intermediates never grow
beyond C(nvars + order, order) coefficients.

Coefficients are stored densely in the context's graded order rather than as a
sparse multi-index map; ``coeffs`` is the canonical sparse view with exact zeros
dropped. A coefficient array may carry leading batch axes, one polynomial per
particle, and the ring operations and intrinsics then act on every entry at once.
The scalar views (``coeffs``, ``const``, ``degree``) need an unbatched poly.

Intrinsics expand f around the constant part a0 of their argument:

    f(p) = sum_{k=0..c} f^(k)(a0) / k! * (p - a0)^k

Since p - a0 has no constant term, its (c+1)-th power vanishes and the series is
exact in the truncated algebra.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from typing import Any

import numpy as np

from taylorflow.da.context import DAContext, MultiIndex
from taylorflow.errors import ConfigError, ContextMismatchError, DomainError

# Coefficients smaller than this are stored as exact zeros.
ZERO_CUTOFF = 1e-300
# Margin by which an intrinsic's argument must sit inside its domain.
DOMAIN_MARGIN = 1e-12

INTRINSICS = ("sqrt", "exp", "log", "sin", "cos", "recip", "pow")


def _canonical(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out[np.abs(out) < ZERO_CUTOFF] = 0.0
    out.flags.writeable = False
    return out


class TruncatedPoly:
    """Multivariate Taylor polynomial truncated at the context order."""

    __slots__ = ("ctx", "array")
    # numpy scalars on the left defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, ctx: DAContext, array: np.ndarray) -> None:
        array = np.asarray(array, dtype=float)
        if array.ndim < 1 or array.shape[-1] != ctx.size:
            raise ValueError(
                f"Coefficient array has shape {array.shape}, expected (..., {ctx.size})"
            )
        self.ctx = ctx
        self.array = _canonical(array)

    # -- construction -----------------------------------------------------

    @classmethod
    def constant(cls, ctx: DAContext, value: float | np.ndarray) -> TruncatedPoly:
        """Constant polynomial; an array value gives one constant per batch entry."""
        value = np.asarray(value, dtype=float)
        array = np.zeros((*value.shape, ctx.size))
        array[..., 0] = value
        return cls(ctx, array)

    @classmethod
    def zero(cls, ctx: DAContext) -> TruncatedPoly:
        return cls(ctx, np.zeros(ctx.size))

    @classmethod
    def from_terms(
        cls, ctx: DAContext, terms: dict[MultiIndex, float]
    ) -> TruncatedPoly:
        """Build from a {multi-index: coefficient} mapping."""
        index = ctx.tables.index
        array = np.zeros(ctx.size)
        for exps, value in terms.items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != ctx.nvars or any(e < 0 for e in exps):
                raise ConfigError(f"Invalid multi-index {exps} for {ctx}")
            if sum(exps) > ctx.order:
                raise ConfigError(
                    f"Multi-index {exps} exceeds truncation order {ctx.order}"
                )
            array[index[exps]] += value
        return cls(ctx, array)

    # -- views ------------------------------------------------------------

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.array.shape[:-1]

    @property
    def coeffs(self) -> dict[MultiIndex, float]:
        """Canonical sparse view: non-zero coefficients keyed by multi-index."""
        exps = self.ctx.tables.exponents
        nz = np.flatnonzero(self.array)
        return {tuple(int(e) for e in exps[k]): float(self.array[k]) for k in nz}

    @property
    def const(self) -> float:
        return float(self.array[0])

    def degree(self) -> int:
        """Highest degree with a non-zero coefficient (-1 for the zero poly)."""
        nz = np.flatnonzero(self.array)
        return int(self.ctx.tables.degrees[nz].max()) if nz.size else -1

    def coeff(self, exps: MultiIndex) -> float:
        k = self.ctx.tables.index.get(tuple(exps))
        return 0.0 if k is None else float(self.array[k])

    def __repr__(self) -> str:
        if self.batch_shape:
            return (
                f"TruncatedPoly(batch={self.batch_shape}, n={self.ctx.nvars}, "
                f"c={self.ctx.order})"
            )
        terms = ", ".join(f"{k}: {v:.6g}" for k, v in self.coeffs.items())
        return f"TruncatedPoly(n={self.ctx.nvars}, c={self.ctx.order}, {{{terms}}})"

    # -- ring operations --------------------------------------------------

    def _check(self, other: TruncatedPoly) -> None:
        if other.ctx != self.ctx:
            raise ContextMismatchError(
                f"Cannot combine polynomials from {self.ctx} and {other.ctx}"
            )

    def _lift(self, other: Any) -> TruncatedPoly:
        if isinstance(other, TruncatedPoly):
            self._check(other)
            return other
        return TruncatedPoly.constant(self.ctx, other)

    def __add__(self, other: Any) -> TruncatedPoly:
        if isinstance(other, TruncatedPoly):
            return add(self, other)
        other = np.asarray(other, dtype=float)
        batch = np.broadcast_shapes(self.batch_shape, other.shape)
        array = np.array(np.broadcast_to(self.array, (*batch, self.ctx.size)))
        array[..., 0] += other
        return TruncatedPoly(self.ctx, array)

    __radd__ = __add__

    def __neg__(self) -> TruncatedPoly:
        return TruncatedPoly(self.ctx, -self.array)

    def __sub__(self, other: Any) -> TruncatedPoly:
        return self + (-other)

    def __rsub__(self, other: Any) -> TruncatedPoly:
        return (-self) + other

    def __mul__(self, other: Any) -> TruncatedPoly:
        if isinstance(other, TruncatedPoly):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> TruncatedPoly:
        if isinstance(other, TruncatedPoly):
            return mul(self, recip(other))
        return scale(self, 1.0 / float(other))

    def __rtruediv__(self, other: Any) -> TruncatedPoly:
        return mul(self._lift(other), recip(self))

    def __pow__(self, exponent: float) -> TruncatedPoly:
        if float(exponent).is_integer() and exponent >= 0:
            return _int_power(self, int(exponent))
        return apply_intrinsic("pow", self, exponent=float(exponent))

    # -- evaluation -------------------------------------------------------

    def eval(self, point: np.ndarray) -> Any:
        """Value at one deviation; one value per entry for a batched poly."""
        value = self.array @ self.ctx.monomials(point)
        return float(value) if np.ndim(value) == 0 else value

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        return self.ctx.monomials_many(points) @ self.array


def make_var(ctx: DAContext, i: int, center: float | np.ndarray = 0.0) -> TruncatedPoly:
    """The polynomial center + dx_i; an array of centers gives a batch."""
    if not 0 <= i < ctx.nvars:
        raise IndexError(f"Variable index {i} out of range for nvars={ctx.nvars}")
    center = np.asarray(center, dtype=float)
    array = np.zeros((*center.shape, ctx.size))
    array[..., 0] = center
    array[..., 1 + i] = 1.0
    return TruncatedPoly(ctx, array)


def add(p: TruncatedPoly, q: TruncatedPoly) -> TruncatedPoly:
    p._check(q)
    return TruncatedPoly(p.ctx, p.array + q.array)


def scale(p: TruncatedPoly, a: float) -> TruncatedPoly:
    return TruncatedPoly(p.ctx, a * p.array)


def mul(p: TruncatedPoly, q: TruncatedPoly) -> TruncatedPoly:
    """Cauchy product with monomials above the context order discarded."""
    p._check(q)
    t = p.ctx.tables
    products = p.array[..., t.mul_left] * q.array[..., t.mul_right]
    return TruncatedPoly(p.ctx, products @ t.mul_scatter)


def truncate(p: TruncatedPoly, order: int) -> TruncatedPoly:
    """Drop every monomial of degree above `order`."""
    array = np.where(p.ctx.tables.degrees <= order, p.array, 0.0)
    return TruncatedPoly(p.ctx, array)


def partial(p: TruncatedPoly, i: int) -> TruncatedPoly:
    """Term-wise derivative with respect to dx_i."""
    if not 0 <= i < p.ctx.nvars:
        raise IndexError(f"Variable index {i} out of range for nvars={p.ctx.nvars}")
    src, dst, fac = p.ctx.tables.partial[i]
    array = np.zeros(p.array.shape)
    array[..., dst] = p.array[..., src] * fac
    return TruncatedPoly(p.ctx, array)


def eval_poly(p: TruncatedPoly, point: np.ndarray) -> float:
    return p.eval(point)


def _int_power(p: TruncatedPoly, k: int) -> TruncatedPoly:
    result = TruncatedPoly.constant(p.ctx, 1.0)
    base = p
    while k:
        if k & 1:
            result = mul(result, base)
        k >>= 1
        if k:
            base = mul(base, base)
    return result


# -- intrinsics -----------------------------------------------------------


def _binomial_series(a0: Any, alpha: float, order: int) -> list[Any]:
    """Taylor coefficients of x**alpha at a0.

    For a non-negative integer alpha the series stops at k = alpha, so a0 = 0 is
    allowed there.
    """
    top = order
    if float(alpha).is_integer() and alpha >= 0:
        top = min(order, int(alpha))
    coeffs = [a0**alpha]
    binom = 1.0
    for k in range(1, top + 1):
        binom *= (alpha - (k - 1)) / k
        coeffs.append(binom * a0 ** (alpha - k))
    zero = np.zeros_like(a0) if np.ndim(a0) else 0.0
    return coeffs + [zero] * (order - top)


def _check_domain(name: str, bad: Any, a0: Any, what: str) -> None:
    if np.any(bad):
        worst = float(np.asarray(a0)[np.asarray(bad)].flat[0]) if np.ndim(a0) else float(a0)
        raise DomainError(f"{name} expanded at {what} constant part {worst:.6g}")


def _series(name: str, a0: Any, order: int, exponent: float | None) -> list[Any]:
    """Coefficients f^(k)(a0) / k!, k = 0..order; a0 may be an array of centers."""
    if name == "exp":
        e = np.exp(a0)
        return [e / math.factorial(k) for k in range(order + 1)]
    if name == "log":
        _check_domain("log", a0 <= DOMAIN_MARGIN, a0, "non-positive")
        return [np.log(a0)] + [
            (-1) ** (k + 1) / (k * a0**k) for k in range(1, order + 1)
        ]
    if name == "sqrt":
        _check_domain("sqrt", a0 <= DOMAIN_MARGIN, a0, "non-positive")
        return _binomial_series(a0, 0.5, order)
    if name == "recip":
        _check_domain("recip", np.abs(a0) <= DOMAIN_MARGIN, a0, "zero")
        return [(-1) ** k / a0 ** (k + 1) for k in range(order + 1)]
    if name in ("sin", "cos"):
        s, c = np.sin(a0), np.cos(a0)
        cycle = [s, c, -s, -c] if name == "sin" else [c, -s, -c, s]
        return [cycle[k % 4] / math.factorial(k) for k in range(order + 1)]
    if name == "pow":
        if exponent is None:
            raise ConfigError("pow requires an exponent")
        label = f"pow({exponent:g})"
        if float(exponent).is_integer():
            if exponent < 0:
                _check_domain(label, np.abs(a0) <= DOMAIN_MARGIN, a0, "zero")
        else:
            _check_domain(label, a0 <= DOMAIN_MARGIN, a0, "non-positive")
        return _binomial_series(a0, float(exponent), order)
    raise ConfigError(f"Unknown intrinsic '{name}'. Available: {list(INTRINSICS)}")


def apply_intrinsic(
    name: str, p: TruncatedPoly, *, exponent: float | None = None
) -> TruncatedPoly:
    """Apply sqrt/exp/log/sin/cos/recip/pow to a polynomial.

    Raises DomainError when the constant part lies outside the function's domain,
    which signals a singular expansion center. For a batched poly one bad entry
    fails the whole call.
    """
    order = p.ctx.order
    a0 = p.array[..., 0]
    a0 = float(a0) if a0.ndim == 0 else np.array(a0)
    coeffs = _series(name, a0, order, exponent)
    nilpotent = p - a0
    # Horner in the nilpotent part
    result = TruncatedPoly.constant(p.ctx, coeffs[order])
    for k in range(order - 1, -1, -1):
        result = mul(result, nilpotent) + coeffs[k]
    return result


def _dispatch(
    name: str, numeric: Callable[[Any], Any]
) -> Callable[[Any], Any]:
    def fn(x: Any) -> Any:
        if isinstance(x, TruncatedPoly):
            return apply_intrinsic(name, x)
        return numeric(x)

    fn.__name__ = name
    fn.__doc__ = f"{name} for floats, arrays and TruncatedPoly."
    return fn


sqrt = _dispatch("sqrt", np.sqrt)
exp = _dispatch("exp", np.exp)
log = _dispatch("log", np.log)
sin = _dispatch("sin", np.sin)
cos = _dispatch("cos", np.cos)
recip = _dispatch("recip", lambda x: 1.0 / x)


def power(x: Any, exponent: float) -> Any:
    """x**exponent for floats, arrays and TruncatedPoly."""
    if isinstance(x, TruncatedPoly):
        return x**exponent
    return np.power(x, exponent)
