"""Solid-on-solid surface dynamics above a hard wall.

Simulation and verification toolkit for the (2+1)-dimensional SOS model:
heat-bath Glauber dynamics with a grand monotone coupling and censoring,
level-line contour analysis, metastability instrumentation, and exact
enumeration plus canonical-path congestion machinery for relaxation-time
bounds on small systems.
"""

from .model import (BoundaryCondition, FloorMode, HeightField, ModelParams,
                    conditional_distribution, equilibrium_height,
                    external_field_site, hamiltonian, log_gibbs_weight)
from .rng import UpdateEvent, UpdateStream

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition", "FloorMode", "HeightField", "ModelParams",
    "conditional_distribution", "equilibrium_height", "external_field_site",
    "hamiltonian", "log_gibbs_weight", "UpdateEvent", "UpdateStream",
    "__version__",
]
