"""Gromov flow: stochastic flow from the linearized measurement at each particle."""

from __future__ import annotations

import logging
from concurrent.futures import Executor

import numpy as np

from taylorflow.errors import NumericalError
from taylorflow.flows.base import BatchEval, FlowEval, FlowField, GaussianPrior
from taylorflow.models import MeasurementModel
from taylorflow.numerics import sym_inverse, sym_inverse_many, symmetrize, symmetrize_many

logger = logging.getLogger(__name__)


def linearized_field(
    hx: np.ndarray,
    H: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    diffusion: bool = True,
) -> FlowEval:
    """Field of the linearized measurement h(x) + H dx.

        S = (P^-1 + lam H^T R^-1 H)^-1
        f = -S H^T R^-1 (h(x) - y)
        Q =  S H^T R^-1 H S
    """
    ht_rinv = H.T @ model.R_inv
    info = ht_rinv @ H
    S = sym_inverse(prior.precision + lam * info)
    drift = -S @ (ht_rinv @ (hx - model.y_obs))
    if not diffusion:
        return FlowEval.drift_only(drift)
    return FlowEval(drift, symmetrize(S @ info @ S))


def linearized_field_many(
    hx: np.ndarray,
    H: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    diffusion: bool = True,
) -> BatchEval:
    """``linearized_field`` for a stack: hx (B, m), H (B, m, n)."""
    count, _, dim = H.shape
    ht_rinv = np.einsum("bmi,mk->bik", H, model.R_inv)
    info = ht_rinv @ H
    S, ok = sym_inverse_many(prior.precision[None, :, :] + lam * info)
    residual = hx - model.y_obs[None, :]
    drift = -np.einsum("bij,bj->bi", S, np.einsum("bim,bm->bi", ht_rinv, residual))
    batch = BatchEval.empty(count, dim, diffusion)
    batch.drift[ok] = drift[ok]
    if batch.diffusion is not None:
        q = symmetrize_many(S @ info @ S)
        batch.diffusion[ok] = q[ok]
    batch.failed[:] = ~ok
    batch.errors.extend(
        f"particle {i}: precision of the linearized posterior is singular or indefinite"
        for i in np.flatnonzero(~ok)
    )
    return batch


def gromov_field(
    x: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    *,
    diffusion: bool = True,
) -> FlowEval:
    """Drift and diffusion of the Gromov flow at state x.

    H is the Jacobian of h at x, read off an order-1 DA expansion.
    """
    hx, H = model.linearize(np.asarray(x, dtype=float))
    return linearized_field(hx, H, lam, prior, model, diffusion=diffusion)


def linearized_batch(
    flow: FlowField,
    states: np.ndarray,
    lam: float,
    diffusion: bool,
    executor: Executor | None,
) -> BatchEval:
    """Vectorized field of a flow built on the linearized measurement.

    Falls back to particle-by-particle evaluation when the batched expansion
    fails, e.g. one particle sits on a singular point of h.
    """
    try:
        hx, H = flow.model.linearize_many(states)
    except NumericalError as e:
        logger.debug("%s: batched linearization failed, evaluating per particle: %s", flow.name, e)
        return FlowField.evaluate_batch(
            flow, states, lam, diffusion=diffusion, executor=executor
        )
    return linearized_field_many(hx, H, lam, flow.prior, flow.model, diffusion=diffusion)


class GromovFlow(FlowField):
    name = "gromov"

    def evaluate(self, x: np.ndarray, lam: float, *, diffusion: bool = True) -> FlowEval:
        return gromov_field(x, lam, self.prior, self.model, diffusion=diffusion)

    def evaluate_batch(
        self,
        states: np.ndarray,
        lam: float,
        *,
        diffusion: bool = True,
        executor: Executor | None = None,
    ) -> BatchEval:
        return linearized_batch(self, states, lam, diffusion, executor)
