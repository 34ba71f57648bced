"""Two-phase cell-cycle model: semigroup numerics, steady states and simulation.

Cells age through a random phase A and a fixed-length phase B, grow along
a deterministic law and divide into halves.  The package discretises the
transport system on a characteristic grid, solves its resolvent through
boundary operators, locates the stationary birth-size density and checks
everything against a Monte Carlo simulation of the underlying process.
"""

from .boundary import ModelOperators, neumann_solve
from .config import build_operators, parse_config
from .duration import DurationModel
from .errors import (CellCycleError, DivergentIntegral, GridMismatch, NegativeAge,
                     NoConvergence, NonPositiveSize, NotInvertible, OutOfRange,
                     PreconditionViolated, SchemaViolation, SurvivalExhausted)
from .grid import (BoundaryDensity, CharGrid, StateDensity, boundary_bump, from_physical,
                   gaussian_bump, halve_size_pushforward, read_state_csv, to_physical,
                   write_state_csv)
from .growth import GrowthModel
from .interval import (BoundaryMeasure, IntervalResolvent, interval_psi_lambda,
                       interval_psi_psi, interval_resolvent)
from .pdmp import ensemble_density, sample_generation_times, simulate_branching
from .steady import apply_p, build_steady_density, existence_report, find_fixed_point
from .transport import evolve, step

__all__ = [
    "BoundaryDensity", "BoundaryMeasure", "CellCycleError", "CharGrid", "DivergentIntegral",
    "DurationModel", "GridMismatch", "GrowthModel", "IntervalResolvent", "ModelOperators",
    "NegativeAge", "NoConvergence", "NonPositiveSize", "NotInvertible", "OutOfRange",
    "PreconditionViolated", "SchemaViolation", "StateDensity", "SurvivalExhausted",
    "apply_p", "boundary_bump", "build_operators", "build_steady_density",
    "ensemble_density", "evolve", "existence_report", "find_fixed_point", "from_physical",
    "gaussian_bump", "halve_size_pushforward", "interval_psi_lambda", "interval_psi_psi",
    "interval_resolvent", "neumann_solve", "parse_config", "read_state_csv",
    "sample_generation_times", "simulate_branching", "step", "to_physical",
    "write_state_csv",
]
