"""Lagrangian Monte Carlo simulator of airborne aerosol transmission,
framed as multiuser molecular communication."""

from .analysis import deposition_heatmap, histogram, summary_metrics
from .config import Config, config_from_dict, config_to_dict, load_config
from .emission import (EmissionProfile, EmpiricalCdf, MovcskSymbol,
                       RespiratoryEventKind, SpeakingMarkov)
from .errors import (AerocommError, ConfigError, ConservationError,
                     InvalidInputError, StiffnessError)
from .outputs import write_outputs
from .scenario import (Agent, Aperture, ApertureKind, SimulationResult,
                       ledger_check, run)
from .transport import (Environment, JetField, Particle, ParticleState,
                        max_throw_distance, step_adaptive)

__version__ = "0.1.0"

__all__ = [
    "Agent", "Aperture", "ApertureKind", "AerocommError", "Config",
    "ConfigError", "ConservationError", "EmissionProfile", "EmpiricalCdf",
    "Environment", "InvalidInputError", "JetField", "MovcskSymbol",
    "Particle", "ParticleState", "RespiratoryEventKind", "SimulationResult",
    "SpeakingMarkov", "StiffnessError", "config_from_dict", "config_to_dict",
    "deposition_heatmap", "histogram", "ledger_check", "load_config",
    "max_throw_distance", "run", "step_adaptive", "summary_metrics",
    "write_outputs",
]
