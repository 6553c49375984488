"""Convex integration for very weak solutions of the 2D Lagrangian mean curvature equation."""
from .classical import SmallPhaseError, solve_classical
from .corrugation import (Schedule, ScheduleError, StageError, StageParams, gamma1, gamma2,
                          iterate, make_schedule, stage, substep)
from .deficit import D_of, SubsolutionState, initial_data, solve_V, split_deficit
from .elliptic import ConvergenceError, PoissonProblem, harmonic_extension, solve_poisson
from .fields import Grid, read_field, write_field
from .mollifier import UnderResolvedError, mollify
from .phase import PhaseError, PhaseSpec
from .report import RunReport

__version__ = "0.1.0"
