"""Simulation of occupied SDEs through finite-dimensional cylindrical projections."""
from .errors import ConfigError, InsufficientData, InvalidArgument, SimulationDiverged
from .measure import (DiscreteMeasure, PartitionOfUnity, SeparatingFamily, barycenter, build_separating_family,
                      build_uniform_partition, cyl_norm, family_for_partition, integrate, lift, locate_bin,
                      project)
from .models import (ConstantModel, CranstonLeJan, LocalOccupiedVol, LovParams, OsdeModel, ProjectedModel,
                     Raimond, cranston_le_jan, lov, raimond)
from .scheme import BrownianPath, SimulatedPath, TimeGrid, euler_maruyama, generate_brownian, run_batch, simulate

__version__ = "0.1.0"
