"""Partial-Lagrangian warm restarts for escaping local ACOPF solutions."""

from .acopf import DualPrices, NlpProblem, assemble_partial_lagrangian, assemble_primal
from .caseio import CaseData, StartPoint, load_case, load_start_points, parse_case
from .globalcheck import EnsembleReport, cluster_solutions, grid_certify_twobus, multistart
from .ipm import NlpSolution, SolverOptions, kkt_residual, solve
from .iterate import IterationReport, run

__all__ = [
    "CaseData",
    "DualPrices",
    "EnsembleReport",
    "IterationReport",
    "NlpProblem",
    "NlpSolution",
    "SolverOptions",
    "StartPoint",
    "assemble_partial_lagrangian",
    "assemble_primal",
    "cluster_solutions",
    "grid_certify_twobus",
    "kkt_residual",
    "load_case",
    "load_start_points",
    "multistart",
    "parse_case",
    "run",
    "solve",
]

__version__ = "0.1.0"
