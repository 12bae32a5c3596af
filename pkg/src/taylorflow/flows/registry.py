"""
Flow registry with lazy loading.

Each entry resolves its field class through a loader on first use and caches it.
This module imports nothing from the flow modules, so ``FlowKind`` validation in
``flows.base`` can consult it without an import cycle.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

from taylorflow.errors import ConfigError

if TYPE_CHECKING:
    from taylorflow.flows.base import FlowField, GaussianPrior
    from taylorflow.models import MeasurementModel


@dataclass
class FlowInfo:
    """Information about a flow field."""

    name: str
    description: str
    family: str  # "linearized" or "differential-algebra"
    loader: Callable[[], type[FlowField]]
    min_order: int | None = None
    max_order: int | None = None
    default_order: int | None = None

    _class: type[FlowField] | None = None

    @property
    def uses_order(self) -> bool:
        return self.min_order is not None

    def check_order(self, order: int) -> None:
        from taylorflow.flows.base import check_order

        if self.min_order is None:
            return
        check_order(self.name, order, self.min_order, self.max_order)

    def get_class(self) -> type[FlowField]:
        if self._class is None:
            self._class = self.loader()
        return self._class

    def create(
        self,
        prior: GaussianPrior,
        model: MeasurementModel,
        order: int | None = None,
    ) -> FlowField:
        """Instantiate the field for one prior/measurement pair."""
        if self.uses_order:
            order = self.default_order if order is None else order
            self.check_order(order)
        else:
            order = None
        return self.get_class()(prior, model, order)


def _load_exact() -> type[FlowField]:
    from taylorflow.flows.exact import ExactFlow

    return ExactFlow


def _load_gromov() -> type[FlowField]:
    from taylorflow.flows.gromov import GromovFlow

    return GromovFlow


def _load_dapff_v1() -> type[FlowField]:
    from taylorflow.flows.dapff_v1 import DapffV1Flow

    return DapffV1Flow


def _load_dapff_v2() -> type[FlowField]:
    from taylorflow.flows.dapff_v2 import DapffV2Flow

    return DapffV2Flow


FLOW_REGISTRY: dict[str, FlowInfo] = {
    "exact": FlowInfo(
        name="exact",
        description="Exact flow, zero diffusion, linearized at each particle",
        family="linearized",
        loader=_load_exact,
    ),
    "gromov": FlowInfo(
        name="gromov",
        description="Gromov stochastic flow, linearized at each particle",
        family="linearized",
        loader=_load_gromov,
    ),
    "dapff-v1": FlowInfo(
        name="dapff-v1",
        description="DA flow expanded at the prior mean, polynomials shared per step",
        family="differential-algebra",
        loader=_load_dapff_v1,
        min_order=2,
        default_order=8,
    ),
    "dapff-v2": FlowInfo(
        name="dapff-v2",
        description="DA flow expanded at each particle, constant parts extracted",
        family="differential-algebra",
        loader=_load_dapff_v2,
        min_order=1,
        max_order=3,
        default_order=3,
    ),
}


def get_flow_info(name: str) -> FlowInfo:
    if name not in FLOW_REGISTRY:
        available = list(FLOW_REGISTRY.keys())
        raise ConfigError(f"Unknown flow: {name}. Available: {available}")
    return FLOW_REGISTRY[name]
