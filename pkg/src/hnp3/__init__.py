"""Topic-marked multivariate Hawkes process with online collapsed SMC."""

from .core import SELF, BranchingRecord, DomainError, Event, Hyperparams
from .inference import InferenceConfig, ParticleFilter, map_summary
from .simulator import GroundTruth, SimulationConfig, simulate

__all__ = [
    "SELF",
    "BranchingRecord",
    "DomainError",
    "Event",
    "Hyperparams",
    "InferenceConfig",
    "ParticleFilter",
    "map_summary",
    "GroundTruth",
    "SimulationConfig",
    "simulate",
]
__version__ = "0.1.0"
