"""Post-solve analysis: violations, prices, KKT residuals and export records."""
from __future__ import annotations

import json

import numpy as np

from .problem import OPFProblem
from .solver import OPFSolution

__all__ = ["EPS_VIOLATION", "violated", "lmp", "kkt_residuals", "solution_record", "trace_lines"]

EPS_VIOLATION = 1e-6


def violated(problem: OPFProblem, y, eps: float = EPS_VIOLATION) -> frozenset:
    """Present inequalities with ``c_j(y) < -eps``; non-finite values count as violated."""
    c = problem.inequalities(np.asarray(y, dtype=float), jac=False)
    bad = (~np.isfinite(c) | (c < -eps)) & problem.present
    return frozenset(int(j) for j in np.flatnonzero(bad))


def lmp(problem: OPFProblem, solution: OPFSolution) -> np.ndarray:
    """Locational marginal prices: duals of the active-power balance rows.

    Units are $/h per per-unit MW; divide by ``base_mva`` for $/MWh.
    """
    if not solution.optimal:
        raise ValueError(f"LMPs need an optimal solution, got status {solution.status!r}")
    return solution.lam[: problem.n_bus].copy()


def kkt_residuals(problem: OPFProblem, solution: OPFSolution) -> dict:
    """First-order optimality residuals from the assembled derivatives.

    ``stationarity`` is the inf-norm of the Lagrangian gradient divided by
    ``1 + max(|lam|, |mu|)``; ``feasibility`` is the largest equality or
    kept-inequality violation (per-unit); ``complementarity`` is
    ``max_j |mu_j c_j|`` divided by the same multiplier scale.
    """
    y = np.asarray(solution.y, dtype=float)
    mask = solution.mask
    _, df = problem.objective(y)
    g, jg = problem.equalities(y)
    c, jc = problem.inequalities(y)
    mu = np.where(mask, solution.mu, 0.0)
    lx = df + jg.T @ solution.lam - jc.T @ mu
    scale = 1.0 + max(np.max(np.abs(solution.lam), initial=0.0), np.max(np.abs(mu), initial=0.0))
    infeas = np.max(np.abs(g), initial=0.0)
    kept = c[mask]
    infeas = max(infeas, np.max(-kept, initial=0.0))
    comp = np.max(np.abs(mu[mask] * kept), initial=0.0) / scale
    return {
        "stationarity": float(np.max(np.abs(lx)) / scale),
        "feasibility": float(infeas),
        "complementarity": float(comp),
    }


def solution_record(problem: OPFProblem, solution: OPFSolution) -> str:
    """One-line JSON export of a solution."""
    rec = {
        "status": solution.status,
        "objective": solution.objective,
        "iterations": solution.iterations,
        "y": solution.y.tolist(),
        "lam": solution.lam.tolist(),
        "mu": solution.mu.tolist(),
        "active": sorted(solution.active),
    }
    return json.dumps(rec)


def trace_lines(solution: OPFSolution):
    """Per-iteration log lines (iteration, barrier, residuals) from a traced solve."""
    for it, gamma, feas, grad, comp, cost in solution.trace:
        yield f"{it:4d}  mu={gamma:.3e}  feas={feas:.3e}  grad={grad:.3e}  comp={comp:.3e}  cost={cost:.3e}"
