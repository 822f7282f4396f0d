"""Simulator and placement optimizer for distributed MoE inference over polar LEO constellations."""

__version__ = "0.1.0"

from .constellation import ConstellationConfig, Ephemeris, GridCoord, build_grid, propagate
from .topology import LinkParams, TopologyModel, TopologyRealization
from .routing import DistanceMatrix, ExpectedPathLatencies, TokenParams
from .activation import ActivationModel, RankedWeights
from .placement import PlacementPlan, SubnetSpec
from .evaluator import ComputeProfile, LatencyReport
from .scenario import Scenario, load_scenario

__all__ = [
    "__version__",
    "ActivationModel",
    "ComputeProfile",
    "ConstellationConfig",
    "DistanceMatrix",
    "Ephemeris",
    "ExpectedPathLatencies",
    "GridCoord",
    "LatencyReport",
    "LinkParams",
    "PlacementPlan",
    "RankedWeights",
    "Scenario",
    "SubnetSpec",
    "TokenParams",
    "TopologyModel",
    "TopologyRealization",
    "build_grid",
    "load_scenario",
    "propagate",
]
