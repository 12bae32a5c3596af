"""Flow fields: exact, Gromov and the two differential algebra flows."""

from taylorflow.flows.base import (
    BatchEval,
    FlowEval,
    FlowField,
    FlowKind,
    GaussianPrior,
)
from taylorflow.flows.dapff_v1 import V1UpdateContext, v1_field, v1_prepare
from taylorflow.flows.dapff_v2 import v2_field
from taylorflow.flows.exact import exact_field
from taylorflow.flows.gromov import gromov_field
from taylorflow.flows.registry import FLOW_REGISTRY, FlowInfo, get_flow_info
from taylorflow.models import MeasurementModel


def create_flow(
    kind: FlowKind, prior: GaussianPrior, model: MeasurementModel
) -> FlowField:
    """Instantiate the field named by ``kind``."""
    return get_flow_info(kind.name).create(prior, model, kind.order)


__all__ = [
    "FLOW_REGISTRY",
    "BatchEval",
    "FlowEval",
    "FlowField",
    "FlowInfo",
    "FlowKind",
    "GaussianPrior",
    "V1UpdateContext",
    "create_flow",
    "exact_field",
    "get_flow_info",
    "gromov_field",
    "v1_field",
    "v1_prepare",
    "v2_field",
]
