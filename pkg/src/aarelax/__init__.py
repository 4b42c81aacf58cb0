"""Anderson acceleration with adaptive relaxation."""
from .accel import MappingProblem, RelaxConfig, SolveReport, solve, solve_composite
from .problems import (AdmixtureProblem, BratuProblem, LinearDiagProblem,
                       gen_admixture_data, make_problem)

__all__ = [
    "MappingProblem", "RelaxConfig", "SolveReport", "solve", "solve_composite",
    "AdmixtureProblem", "BratuProblem", "LinearDiagProblem", "gen_admixture_data",
    "make_problem",
]
__version__ = "0.1.0"
