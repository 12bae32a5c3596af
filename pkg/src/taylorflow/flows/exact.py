"""Exact flow: deterministic affine flow x' = A(lam) x + b(lam)."""

from __future__ import annotations

import logging
from concurrent.futures import Executor

import numpy as np

from taylorflow.errors import NumericalError
from taylorflow.flows.base import BatchEval, FlowEval, FlowField, GaussianPrior
from taylorflow.models import MeasurementModel
from taylorflow.numerics import sym_inverse, sym_inverse_many

logger = logging.getLogger(__name__)


def exact_coefficients(
    x: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
) -> tuple[np.ndarray, np.ndarray]:
    """A(lam) and b(lam) with the measurement linearized at x.

        r = y - h(x) + H x
        A = -1/2 P H^T (lam H P H^T + R)^-1 H
        b = (I + 2 lam A) (A m + (I + lam A) P H^T R^-1 r)
    """
    x = np.asarray(x, dtype=float)
    hx, H = model.linearize(x)
    P = prior.cov
    n = len(x)
    eye = np.eye(n)
    innovation = model.y_obs - hx + H @ x
    gain = P @ H.T
    A = -0.5 * gain @ sym_inverse(lam * H @ gain + model.R) @ H
    b = (eye + 2.0 * lam * A) @ (
        A @ prior.mean + (eye + lam * A) @ gain @ model.R_inv @ innovation
    )
    return A, b


def exact_field(
    x: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    diffusion: bool = True,
) -> FlowEval:
    """f = A x + b and Q = 0."""
    A, b = exact_coefficients(x, lam, prior, model)
    return FlowEval.drift_only(A @ np.asarray(x, dtype=float) + b)


def exact_field_many(
    states: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
) -> BatchEval:
    """``exact_field`` at every row of ``states``; singular innovations are marked failed."""
    states = np.asarray(states, dtype=float)
    count, n = states.shape
    hx, H = model.linearize_many(states)
    eye = np.eye(n)
    innovation = model.y_obs[None, :] - hx + np.einsum("bmi,bi->bm", H, states)
    gain = np.einsum("ij,bmj->bim", prior.cov, H)
    inner, ok = sym_inverse_many(lam * H @ gain + model.R[None, :, :])
    A = -0.5 * gain @ inner @ H
    lifted = eye[None, :, :] + lam * A
    pulled = np.einsum("bim,mk,bk->bi", gain, model.R_inv, innovation)
    rhs = A @ prior.mean + np.einsum("bij,bj->bi", lifted, pulled)
    b = np.einsum("bij,bj->bi", eye[None, :, :] + 2.0 * lam * A, rhs)
    drift = np.einsum("bij,bj->bi", A, states) + b
    batch = BatchEval.empty(count, n, False)
    batch.drift[ok] = drift[ok]
    batch.failed[:] = ~ok
    batch.errors.extend(
        f"particle {i}: innovation covariance is singular" for i in np.flatnonzero(~ok)
    )
    return batch


class ExactFlow(FlowField):
    name = "exact"
    stochastic = False

    def evaluate(self, x: np.ndarray, lam: float, *, diffusion: bool = True) -> FlowEval:
        return exact_field(x, lam, self.prior, self.model)

    def evaluate_batch(
        self,
        states: np.ndarray,
        lam: float,
        *,
        diffusion: bool = True,
        executor: Executor | None = None,
    ) -> BatchEval:
        try:
            return exact_field_many(states, lam, self.prior, self.model)
        except NumericalError as e:
            logger.debug("exact: batched evaluation failed, evaluating per particle: %s", e)
            return super().evaluate_batch(
                states, lam, diffusion=diffusion, executor=executor
            )
