"""Event-triggered robust MPC with constraint tightening.

The toolkit covers the full pipeline: polytope algebra and tightened-set
synthesis, the robust optimal-control QP, construction of hyper-
rectangular triggering sets by convex programs or linear-program
relaxations, and an event-triggered closed-loop simulator with runtime
decay certificates.
"""

from .geometry import (HyperRect, Polytope, WeightedDistanceResult,
                       minkowski_sum_box, pontryagin_diff, shape_ratio,
                       support, weighted_projection)
from .rmpc import InfeasibleState, MpcSolution, solve_rmpc, stage_cost
from .sim import (DisturbanceModel, SimTrace, run_closed_loop,
                  step_trigger_test, trigger_statistics)
from .solver import (LpProblem, QpProblem, SolveReport, Status,
                     maximize_log_volume, solve_lp, solve_qp)
from .tightening import (PlantModel, RmpcSetup, build_setup,
                         synthesize_nominal_gain, synthesize_tightening_gains)
from .trigger import (CandidateData, PrincipalPolytope, TriggerSchedule,
                      assemble_principal, build_candidates, build_schedule,
                      construct_box_cp, construct_box_lp)

__version__ = "0.1.0"

__all__ = [
    "HyperRect", "Polytope", "WeightedDistanceResult", "support",
    "pontryagin_diff", "minkowski_sum_box", "weighted_projection",
    "shape_ratio",
    "LpProblem", "QpProblem", "SolveReport", "Status", "solve_lp", "solve_qp",
    "maximize_log_volume",
    "PlantModel", "RmpcSetup", "synthesize_nominal_gain",
    "synthesize_tightening_gains", "build_setup",
    "MpcSolution", "InfeasibleState", "solve_rmpc", "stage_cost",
    "CandidateData", "PrincipalPolytope", "TriggerSchedule",
    "build_candidates", "assemble_principal", "construct_box_cp",
    "construct_box_lp", "build_schedule",
    "DisturbanceModel", "SimTrace", "step_trigger_test", "run_closed_loop",
    "trigger_statistics",
]
