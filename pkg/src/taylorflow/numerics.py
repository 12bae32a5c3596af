"""Dense linear algebra and seeded Gaussian sampling for the flows.

Symmetric matrices (P, R, S, Q) are plain float arrays validated by
``as_sym_matrix``. Noise comes from counter-based Philox streams keyed by
(seed, step, particle, purpose), so draws do not depend on execution order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from taylorflow.errors import ConfigError, IndefiniteMatrixError, SingularMatrixError

SYMMETRY_TOL = 1e-9
MAX_CONDITION = 1e12
# ldl_sqrt: pivots below CLAMP_TOL * max|Q| are zeroed; eigenvalues below
# -NEGATIVE_TOL * max|Q| are rejected.
CLAMP_TOL = 1e-12
NEGATIVE_TOL = 1e-8

_UINT64 = (1 << 64) - 1

# Stream purposes
PRIOR = 1
DIFFUSION = 2
GRID = 3


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def as_sym_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate near-symmetry and return the symmetrized matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} has non-finite entries")
    scale = np.max(np.abs(a), initial=0.0)
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ConfigError(f"{name} is not symmetric")
    return symmetrize(a)


def sym_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    a = symmetrize(a)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise SingularMatrixError(f"Matrix is ill-conditioned (cond={cond:.3g})")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Matrix is not positive definite: {e}") from e
    inv = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]))
    return symmetrize(inv)


def symmetrize_many(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _replace_failed(a: np.ndarray, ok: np.ndarray, fill: np.ndarray) -> np.ndarray:
    return np.where(ok[:, None, None], a, fill[None, :, :])


def sym_inverse_many(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``sym_inverse`` over a (B, n, n) stack.

    Returns the inverses and a mask of the entries that passed the same checks:
    finite, condition number below MAX_CONDITION, positive definite. Failed
    entries come back as identity.
    """
    a = symmetrize_many(np.asarray(a, dtype=float))
    eye = np.eye(a.shape[-1])
    ok = np.all(np.isfinite(a), axis=(1, 2))
    a = _replace_failed(a, ok, eye)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(a)
    ok &= np.isfinite(cond) & (cond < MAX_CONDITION)
    a = _replace_failed(a, ok, eye)
    ok &= np.linalg.eigvalsh(a)[:, 0] > 0.0
    a = _replace_failed(a, ok, eye)
    inv = symmetrize_many(np.linalg.inv(a))
    return _replace_failed(inv, ok, eye), ok


def is_positive_definite(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError:
        return False
    return True


class LDLRoot(NamedTuple):
    """Square-root factor B with B B^T = Q, and the number of clamped pivots."""

    factor: np.ndarray
    clamps: int


def ldl_sqrt(q: np.ndarray) -> LDLRoot:
    """Factor a near-PSD matrix as Q = L T L^T and return B = L T^(1/2).

    Uses symmetric diagonal pivoting (largest remaining diagonal first), so rows of B
    follow the original ordering while L is lower triangular in pivot order. Pivots
    below CLAMP_TOL * max|Q|, or negative, are clamped to zero and counted.
    """
    a = symmetrize(q)
    n = a.shape[0]
    scale = np.max(np.abs(a), initial=0.0)
    if scale == 0.0:
        return LDLRoot(np.zeros((n, n)), n)
    if not np.all(np.isfinite(a)):
        raise IndefiniteMatrixError("Diffusion matrix has non-finite entries")
    smallest = np.linalg.eigvalsh(a)[0]
    if smallest < -NEGATIVE_TOL * scale:
        raise IndefiniteMatrixError(
            f"Matrix has a negative eigenvalue {smallest:.3g} (max |Q| = {scale:.3g})"
        )

    work = a.copy()
    lower = np.eye(n)
    pivots = np.zeros(n)
    perm = np.arange(n)
    clamps = 0
    for k in range(n):
        p = k + int(np.argmax(np.diag(work)[k:]))
        if p != k:
            work[[k, p], :] = work[[p, k], :]
            work[:, [k, p]] = work[:, [p, k]]
            lower[[k, p], :k] = lower[[p, k], :k]
            perm[[k, p]] = perm[[p, k]]
        d = work[k, k]
        if d <= CLAMP_TOL * scale:
            clamps += 1
            continue
        pivots[k] = d
        col = work[k + 1 :, k] / d
        lower[k + 1 :, k] = col
        work[k + 1 :, k + 1 :] -= d * np.outer(col, col)

    factor = np.empty((n, n))
    factor[perm, :] = lower * np.sqrt(pivots)[None, :]
    return LDLRoot(factor, clamps)


class LDLRoots(NamedTuple):
    """``ldl_sqrt`` over a stack: factors, clamp counts and the rejected entries."""

    factors: np.ndarray  # (B, n, n)
    clamps: np.ndarray  # (B,) int
    indefinite: np.ndarray  # (B,) bool, factor left at zero


def ldl_sqrt_many(qs: np.ndarray) -> LDLRoots:
    """Batched ``ldl_sqrt``: the same pivoting, clamping and rejection per entry.

    Entries that ``ldl_sqrt`` would reject with IndefiniteMatrixError are flagged
    in ``indefinite`` instead of raising.
    """
    a = symmetrize_many(np.asarray(qs, dtype=float))
    count, n = a.shape[0], a.shape[-1]
    rows = np.arange(count)
    finite = np.all(np.isfinite(a), axis=(1, 2))
    work = np.where(finite[:, None, None], a, 0.0)
    scale = np.max(np.abs(work), axis=(1, 2), initial=0.0)
    smallest = np.linalg.eigvalsh(work)[:, 0]
    indefinite = ~finite | (smallest < -NEGATIVE_TOL * scale)
    work[indefinite] = 0.0

    lower = np.tile(np.eye(n), (count, 1, 1))
    pivots = np.zeros((count, n))
    perm = np.tile(np.arange(n), (count, 1))
    clamps = np.zeros(count, dtype=int)
    for k in range(n):
        p = k + np.argmax(np.diagonal(work, axis1=1, axis2=2)[:, k:], axis=1)
        order = np.tile(np.arange(n), (count, 1))
        order[rows, k] = p
        order[rows, p] = k
        work = work[rows[:, None, None], order[:, :, None], order[:, None, :]]
        lower[:, :, :k] = lower[rows[:, None], order][:, :, :k]
        perm = perm[rows[:, None], order]
        d = work[:, k, k]
        clamped = d <= CLAMP_TOL * scale
        clamps += clamped
        d = np.where(clamped, 0.0, d)
        col = work[:, k + 1 :, k] / np.where(clamped, 1.0, d)[:, None]
        col[clamped] = 0.0
        pivots[:, k] = d
        lower[:, k + 1 :, k] = col
        work[:, k + 1 :, k + 1 :] -= d[:, None, None] * (col[:, :, None] * col[:, None, :])

    factors = np.empty((count, n, n))
    factors[rows[:, None], perm, :] = lower * np.sqrt(pivots)[:, None, :]
    factors[indefinite] = 0.0
    clamps[indefinite] = 0
    return LDLRoots(factors, clamps, indefinite)


@dataclass(frozen=True)
class RngStream:
    """Counter-based Gaussian stream identified by (seed, particle, step, purpose)."""

    seed: int
    particle: int = 0
    step: int = 0
    purpose: int = 0

    def generator(self) -> np.random.Generator:
        counter = [0, self.step & _UINT64, self.particle & _UINT64, self.purpose]
        bitgen = np.random.Philox(key=self.seed & _UINT64, counter=counter)
        return np.random.Generator(bitgen)

    def standard_normal(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self.generator().standard_normal(size)


def gaussian_draw(
    rng: RngStream,
    mean: np.ndarray,
    cov: np.ndarray,
    size: int | None = None,
) -> np.ndarray:
    """mean + B z with B = ldl_sqrt(cov) and z standard normal from the stream.

    With ``size`` the stream yields a (size, n) block of draws instead of one vector.
    """
    mean = np.asarray(mean, dtype=float)
    root = ldl_sqrt(cov).factor
    if size is None:
        return mean + root @ rng.standard_normal(len(mean))
    z = rng.standard_normal((size, len(mean)))
    return mean[None, :] + z @ root.T
