"""Zone-level ride-hailing control stack: MPC pricing and relocation, a
learned optimization proxy with transportation disaggregation, and a
discrete-event fleet simulator."""

__version__ = "0.1.0"

from .core import (FleetSnapshot, RandomStreams, ScenarioConfig, TravelMatrix,
                   build_travel_matrix, grid_layout, phi_window, round_half_up,
                   weight_qp, weight_qr)
from .demand import (DestinationDistribution, Request, RequestStream,
                     aggregate_zone_demand, disaggregate,
                     generate_scenario_demand, make_profile, perturb_stream)
from .transport import (TransportProblem, certify_optimality, plan_cost,
                        solve_transport)

__all__ = [
    "__version__", "FleetSnapshot", "RandomStreams", "ScenarioConfig",
    "TravelMatrix", "build_travel_matrix", "grid_layout", "phi_window",
    "round_half_up", "weight_qp", "weight_qr", "DestinationDistribution",
    "Request", "RequestStream", "aggregate_zone_demand", "disaggregate",
    "generate_scenario_demand", "make_profile", "perturb_stream",
    "TransportProblem", "certify_optimality", "plan_cost", "solve_transport",
]
