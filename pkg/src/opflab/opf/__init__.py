"""AC-OPF assembly, interior-point solve and solution analysis."""
from .problem import INEQ_KINDS, OPFProblem, assemble
from .analysis import EPS_VIOLATION, kkt_residuals, lmp, solution_record, trace_lines, violated
from .solver import OPFSolution, SolverOptions, binding_set, solve

__all__ = [
    "EPS_VIOLATION", "kkt_residuals", "lmp", "solution_record", "trace_lines", "violated",
   "INEQ_KINDS", "OPFProblem", "OPFSolution", "SolverOptions", "assemble", "binding_set", "solve"]
