"""
taylorflow - particle flow measurement updates on truncated Taylor polynomials.

Four flows move an equal-weight ensemble from a Gaussian prior to the posterior
of a nonlinear measurement: the exact flow, the Gromov flow, and two
differential algebra flows (DAPFFv1, DAPFFv2) built on a truncated multivariate
Taylor polynomial engine.

Basic usage:
    from taylorflow import update, builtin_range_scenario

    s = builtin_range_scenario()
    final, trajectory = update(s.prior, s.model, flow="dapff-v1", order=8)

    # List the flows
    from taylorflow import available_flows
    print([f.name for f in available_flows()])
"""

from taylorflow.api import available_flows, get_flow, update
from taylorflow.ensemble import ParticleEnsemble, ensemble_stats, sample_prior
from taylorflow.flows import FlowEval, FlowKind, GaussianPrior
from taylorflow.integrator import FlowConfig, FlowTrajectory, flow_update
from taylorflow.models import AffineModel, MeasurementModel, RangeModel
from taylorflow.scenarios import Scenario, builtin_range_scenario, load_scenario

__version__ = "0.1.0"
__all__ = [
    "AffineModel",
    "FlowConfig",
    "FlowEval",
    "FlowKind",
    "FlowTrajectory",
    "GaussianPrior",
    "MeasurementModel",
    "ParticleEnsemble",
    "RangeModel",
    "Scenario",
    "__version__",
    "available_flows",
    "builtin_range_scenario",
    "ensemble_stats",
    "flow_update",
    "get_flow",
    "load_scenario",
    "sample_prior",
    "update",
]
