"""
DAPFFv2: differential algebra flow expanded at every particle.

Each particle x is its own expansion center. The field is the constant part of
the drift and diffusion polynomials, i.e. their value at a null deviation.

The algebra works at order max(c, 2) so the quadratic log-prior is always
represented; the measurement polynomial y(dx) = h(x + dx) is truncated at c.
With c = 1 the measurement is affine in dx and the log-posterior exactly
quadratic, so the field is the Gromov field and is computed by the same code.

Whole ensembles are expanded in one batched pass (``taylorflow.da.batch``);
if any particle makes the batch fail, every particle is expanded on its own so
the failure is pinned to the particles that caused it.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor

import numpy as np

from taylorflow.da import DAContext, gradient, hessian, jacobian, polymat_inverse, quadratic_form
from taylorflow.da import batch as dab
from taylorflow.errors import IndefiniteMatrixError, NumericalError
from taylorflow.flows.base import (
    BatchEval,
    FlowEval,
    FlowField,
    GaussianPrior,
    check_order,
    deviation_vector,
)
from taylorflow.flows.gromov import linearized_batch, linearized_field
from taylorflow.models import MeasurementModel
from taylorflow.numerics import is_positive_definite, sym_inverse_many, symmetrize, symmetrize_many

logger = logging.getLogger(__name__)

MIN_ORDER = 1
MAX_ORDER = 3


def v2_field(
    x: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    order: int,
    *,
    diffusion: bool = True,
) -> FlowEval:
    check_order("dapff-v2", order, MIN_ORDER, MAX_ORDER)
    x = np.asarray(x, dtype=float)
    if order == 1:
        hx, H = model.linearize(x)
        return linearized_field(hx, H, lam, prior, model, diffusion=diffusion)

    ctx = DAContext(len(x), order)
    offset = deviation_vector(ctx) + (x - prior.mean)
    prior_poly = -0.5 * quadratic_form(offset, prior.precision)
    residual = model.expand(x, ctx) - model.y_obs
    loglik = -0.5 * quadratic_form(residual, model.R_inv)

    hess = hessian(prior_poly + lam * loglik)
    hess0 = hess.constant()
    if not is_positive_definite(-hess0):
        raise IndefiniteMatrixError(
            f"Negated log-posterior Hessian is not positive definite at x={x.tolist()}"
        )
    grad = gradient(loglik)
    if not diffusion:
        return FlowEval.drift_only(-np.linalg.solve(hess0, grad.constant()))

    hess_inv = polymat_inverse(hess)
    drift = -(hess_inv @ grad)
    q = hess_inv.constant() @ jacobian(drift).constant().T
    return FlowEval(drift.constant(), symmetrize(q))


def v2_field_many(
    states: np.ndarray,
    lam: float,
    prior: GaussianPrior,
    model: MeasurementModel,
    order: int,
    *,
    diffusion: bool = True,
) -> BatchEval:
    """``v2_field`` at every row of ``states`` for order >= 2.

    Particles whose negated Hessian is not positive definite are marked failed.
    Raises NumericalError (e.g. DomainError) if the batched expansion itself fails.
    """
    states = np.asarray(states, dtype=float)
    count, n = states.shape
    ctx = DAContext(n, order)
    offset = dab.deviations(ctx, states - prior.mean[None, :])
    prior_poly = -0.5 * dab.bquadratic_form(ctx, offset, prior.precision)
    residual = model.expand_many(states, ctx)
    residual[..., 0] -= model.y_obs[None, :]
    loglik = -0.5 * dab.bquadratic_form(ctx, residual, model.R_inv)

    hess = dab.bhessian(ctx, prior_poly + lam * loglik)
    m0_inv, ok = sym_inverse_many(-hess[..., 0])
    m0_inv = -m0_inv
    grad = dab.bgradient(ctx, loglik)

    batch = BatchEval.empty(count, n, diffusion)
    if not diffusion:
        drift = -np.einsum("bij,bj->bi", m0_inv, grad[..., 0])
    else:
        hess_inv = dab.binverse(ctx, hess, m0_inv)
        drift_poly = -dab.bmatmul(ctx, hess_inv, grad)
        jac0 = dab.bjacobian(ctx, drift_poly)[..., 0]
        q = symmetrize_many(m0_inv @ np.swapaxes(jac0, 1, 2))
        batch.diffusion[ok] = q[ok]
        drift = drift_poly[..., 0]
    batch.drift[ok] = drift[ok]
    batch.failed[:] = ~ok
    batch.errors.extend(
        f"particle {i}: negated log-posterior Hessian is not positive definite"
        for i in np.flatnonzero(~ok)
    )
    return batch


class DapffV2Flow(FlowField):
    name = "dapff-v2"

    def __init__(
        self,
        prior: GaussianPrior,
        model: MeasurementModel,
        order: int | None = None,
    ) -> None:
        order = MAX_ORDER if order is None else order
        check_order(self.name, order, MIN_ORDER, MAX_ORDER)
        super().__init__(prior, model, order)

    def evaluate(self, x: np.ndarray, lam: float, *, diffusion: bool = True) -> FlowEval:
        return v2_field(x, lam, self.prior, self.model, self.order, diffusion=diffusion)

    def evaluate_batch(
        self,
        states: np.ndarray,
        lam: float,
        *,
        diffusion: bool = True,
        executor: Executor | None = None,
    ) -> BatchEval:
        if self.order == 1:
            return linearized_batch(self, states, lam, diffusion, executor)
        try:
            return v2_field_many(
                states, lam, self.prior, self.model, self.order, diffusion=diffusion
            )
        except NumericalError as e:
            logger.debug("dapff-v2: batched expansion failed, evaluating per particle: %s", e)
            return super().evaluate_batch(
                states, lam, diffusion=diffusion, executor=executor
            )
