"""Hybrid pipelines: warm-started solves and the iterative feasibility test."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..opf import OPFProblem, OPFSolution, SolverOptions, solve, violated
from ..sampling import start_from_target

__all__ = [
    "FeasibilityError",
    "FeasibilityResult",
    "feasibility_test",
    "WarmStartResult",
    "warm_start_eval",
    "CLIP_MARGIN",
]

log = logging.getLogger(__name__)

CLIP_MARGIN = 1e-3


class FeasibilityError(RuntimeError):
    def __init__(self, message, round_index, solution=None):
        super().__init__(message)
        self.round = round_index
        self.solution = solution


@dataclass(frozen=True)
class FeasibilityResult:
    solution: OPFSolution
    iterations: int  # reduced solves performed
    added: tuple  # constraints reinstated after each round
    mask: frozenset  # final constraint set
    solver_iterations: int  # interior-point iterations summed over rounds


def feasibility_test(
    problem: OPFProblem,
    predicted,
    trivial_on=(),
    options: SolverOptions | None = None,
    eps: float | None = None,
) -> FeasibilityResult:
    """Solve with the predicted set, then re-add violated constraints until none remain.

    The working set starts as ``predicted | trivial_on``. A reduced solve that
    does not reach optimality still contributes the violations of its last
    iterate; if it has none the loop cannot make progress and raises.
    """
    kw = {} if eps is None else {"eps": eps}
    present = frozenset(int(j) for j in np.flatnonzero(problem.present))
    work = (frozenset(int(j) for j in predicted) | frozenset(int(j) for j in trivial_on)) & present
    added, total_iter = [], 0
    for k in range(len(present) + 1):
        sol = solve(problem, mask=sorted(work), options=options)
        total_iter += sol.iterations
        v = violated(problem, sol.y, **kw) - work
        if not v:
            if not sol.optimal:
                raise FeasibilityError(f"reduced solve failed in round {k} ({sol.status}) with no violations to add",
                                       k, sol)
            return FeasibilityResult(sol, k + 1, tuple(added), work, total_iter)
        added.append(frozenset(v))
        work = work | v
    raise FeasibilityError("working set stopped growing", len(present), sol)


@dataclass(frozen=True)
class WarmStartResult:
    iterations_warm: int
    iterations_flat: int
    time_warm: float
    time_flat: float
    n_clipped: int
    warm: OPFSolution
    flat: OPFSolution

    @property
    def speedup(self) -> float:
        """Flat-start over warm-start iteration count."""
        return self.iterations_flat / max(self.iterations_warm, 1)

    @property
    def time_ratio(self) -> float:
        return self.time_flat / self.time_warm if self.time_warm > 0 else float("nan")

    @property
    def converged(self) -> bool:
        return self.warm.optimal


def warm_start_eval(problem: OPFProblem, start, options: SolverOptions | None = None,
                    flat: OPFSolution | None = None) -> WarmStartResult:
    """Solve from a predicted start and from the flat start.

    ``start`` is either a regression target (Pg, generator-bus Vm), which is
    scattered into the flat start, or a full variable vector. Values outside
    the variable bounds are clipped with a small margin and counted. A start
    equal to the flat start is solved exactly like the flat start.
    """
    start = np.asarray(start, dtype=float)
    if start.shape == (problem.n_var,):
        y0, clipped = problem.clip_to_bounds(start, CLIP_MARGIN)
    else:
        y0, clipped = start_from_target(problem, start, CLIP_MARGIN)
    if clipped:
        log.info("warm start: clipped %d values into bounds", clipped)
    if flat is None:
        flat = solve(problem, options=options)
    same = np.array_equal(y0, problem.flat_start())
    warm = flat if same else solve(problem, y0=y0, options=options)
    if not warm.optimal:
        log.warning("warm-started solve ended with status %s", warm.status)
    return WarmStartResult(warm.iterations, flat.iterations, warm.wall_time, flat.wall_time, clipped, warm, flat)
