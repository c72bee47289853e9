"""Two-stage planner: Benders master over bases, branch-and-cut over assignments."""
from .benders import BendersState, PlanResult, SolveStats, plan_instance, plan_period, solve_master, write_stats
from .branch_cut import CostOracle, SubproblemResult, TimeRule, solve_subproblem
from .enumerate import ExactResult, enumerate_exact
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, LpResult, solve_lp

__all__ = [
    "BendersState", "PlanResult", "SolveStats", "plan_instance", "plan_period", "solve_master",
    "write_stats", "CostOracle", "SubproblemResult", "TimeRule", "solve_subproblem",
    "ExactResult", "enumerate_exact", "INFEASIBLE", "OPTIMAL", "UNBOUNDED", "LinearProgram",
    "LpResult", "solve_lp",
]
