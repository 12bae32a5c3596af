"""
DAPFFv1: differential algebra flow expanded once at the prior mean.

The log-prior and log-likelihood are expanded around the prior mean as
polynomials in the deviation dx = x - mean:

    T(dx) = -1/2 dx^T P^-1 dx
    L(dx) = -1/2 (y(dx) - y_obs)^T R^-1 (y(dx) - y_obs),   y(dx) = h(mean + dx)

For each lambda the log-posterior polynomial P = T + lam L gives

    F = -Hess(P)^-1 grad(L)
    Q = sym(Hess(P)^-1 J(F)^T)

and every particle evaluates F and Q at its own deviation. The polynomials are
built once per lambda step and shared by the whole ensemble.
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from taylorflow.da import (
    DAContext,
    PolyArray,
    TruncatedPoly,
    gradient,
    hessian,
    jacobian,
    polymat_inverse,
    quadratic_form,
)
from taylorflow.errors import IndefiniteMatrixError, NumericalError
from taylorflow.flows.base import (
    BatchEval,
    FlowEval,
    FlowField,
    GaussianPrior,
    check_order,
    deviation_vector,
)
from taylorflow.models import MeasurementModel
from taylorflow.numerics import is_positive_definite, symmetrize

logger = logging.getLogger(__name__)

MIN_ORDER = 2


@dataclass
class StepPolys:
    """Drift and diffusion polynomials for one lambda."""

    lam: float
    drift: PolyArray
    diffusion: PolyArray


@dataclass
class V1UpdateContext:
    """Expansion at the prior mean plus the per-lambda polynomial cache."""

    prior: GaussianPrior
    model: MeasurementModel
    ctx: DAContext
    prior_poly: TruncatedPoly
    loglik: TruncatedPoly
    loglik_grad: PolyArray
    prior_hess: PolyArray
    loglik_hess: PolyArray
    cache: StepPolys | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return self.ctx.order

    def polys_at(self, lam: float) -> StepPolys:
        """Drift/diffusion polynomials at lam, rebuilt whenever lam changes."""
        if self.cache is not None and self.cache.lam == lam:
            return self.cache
        hess = self.prior_hess + lam * self.loglik_hess
        if not is_positive_definite(-hess.constant()):
            raise IndefiniteMatrixError(
                f"Negated log-posterior Hessian is not positive definite at lambda={lam:.6g}"
            )
        hess_inv = polymat_inverse(hess)
        drift = -(hess_inv @ self.loglik_grad)
        diffusion = (hess_inv @ jacobian(drift).T).symmetrize()
        self.cache = StepPolys(lam, drift, diffusion)
        logger.debug("Built DAPFFv1-%d polynomials at lambda=%.6g", self.order, lam)
        return self.cache


def v1_prepare(
    prior: GaussianPrior, model: MeasurementModel, order: int
) -> V1UpdateContext:
    """Expand log-prior and log-likelihood at the prior mean to ``order``."""
    check_order("dapff-v1", order, MIN_ORDER, None)
    ctx = DAContext(prior.dim, order)
    dx = deviation_vector(ctx)
    prior_poly = -0.5 * quadratic_form(dx, prior.precision)
    residual = model.expand(prior.mean, ctx) - model.y_obs
    loglik = -0.5 * quadratic_form(residual, model.R_inv)
    return V1UpdateContext(
        prior=prior,
        model=model,
        ctx=ctx,
        prior_poly=prior_poly,
        loglik=loglik,
        loglik_grad=gradient(loglik),
        prior_hess=hessian(prior_poly),
        loglik_hess=hessian(loglik),
    )


def v1_field(
    uctx: V1UpdateContext, lam: float, dx: np.ndarray, *, diffusion: bool = True
) -> FlowEval:
    """Field at a particle with deviation dx from the prior mean."""
    polys = uctx.polys_at(lam)
    drift = polys.drift.eval(dx)
    if not diffusion:
        return FlowEval.drift_only(drift)
    return FlowEval(drift, symmetrize(polys.diffusion.eval(dx)))


class DapffV1Flow(FlowField):
    name = "dapff-v1"

    def __init__(
        self,
        prior: GaussianPrior,
        model: MeasurementModel,
        order: int | None = None,
    ) -> None:
        order = 8 if order is None else order
        super().__init__(prior, model, order)
        self.update_context = v1_prepare(prior, model, order)

    def begin_step(self, lam: float) -> None:
        self.update_context.polys_at(lam)

    def evaluate(self, x: np.ndarray, lam: float, *, diffusion: bool = True) -> FlowEval:
        dx = np.asarray(x, dtype=float) - self.prior.mean
        return v1_field(self.update_context, lam, dx, diffusion=diffusion)

    def evaluate_batch(
        self,
        states: np.ndarray,
        lam: float,
        *,
        diffusion: bool = True,
        executor: Executor | None = None,
    ) -> BatchEval:
        """Vectorized substitution of every deviation into the shared polynomials.

        A failure while building the step polynomials fails the whole ensemble.
        """
        count, dim = states.shape
        try:
            polys = self.update_context.polys_at(lam)
        except NumericalError as e:
            batch = BatchEval.empty(count, dim, diffusion)
            batch.failed[:] = True
            batch.errors.append(f"all particles: {e}")
            return batch
        deviations = states - self.prior.mean[None, :]
        drift = polys.drift.eval_many(deviations)
        q = None
        if diffusion:
            q = polys.diffusion.eval_many(deviations)
            q = 0.5 * (q + q.transpose(0, 2, 1))
        return BatchEval(drift=drift, diffusion=q, failed=np.zeros(count, dtype=bool))
