"""Embedded convex QP/LP solver for the transcribed DMPC problems."""

from .kkt import SolverSettings
from .problem import QpProblem, QpSolution, Status
from .qp import QpWorkspace, solve, solve_sequence

__all__ = ["QpProblem", "QpSolution", "QpWorkspace", "SolverSettings", "Status",
           "solve", "solve_sequence"]
