"""Dataset generation: load re-scaling, N-1 line removal and OPF labelling."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..grid import GridCase, islanding_branches, remove_line
from ..opf import OPFProblem, assemble, lmp, solve

__all__ = [
    "FACTOR_LOW",
    "FACTOR_HIGH",
    "GenerationError",
    "Sample",
    "Dataset",
    "derive_seed",
    "draw_factors",
    "target_vector",
    "start_from_target",
    "label",
    "sample_case",
    "sample_problem",
    "generate",
    "split",
    "trivial_sets",
]

log = logging.getLogger(__name__)

FACTOR_LOW, FACTOR_HIGH = 0.8, 1.2
MAX_ATTEMPTS = 50
MAX_REJECTION_RATE = 0.9


class GenerationError(RuntimeError):
    """Too many infeasible draws; carries the rejection counts."""

    def __init__(self, message, counts):
        super().__init__(message)
        self.counts = counts


@dataclass(eq=False)
class Sample:
    x: np.ndarray  # Pd then Qd per load, per-unit
    y_star: np.ndarray  # Pg per in-service gen, then Vm per generator bus
    active: np.ndarray  # bool over the base-case inequality enumeration
    removed_branch: int | None
    lmp: np.ndarray | None
    seed: int
    objective: float = float("nan")
    iterations: int = 0

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        arrays = ("x", "y_star", "active")
        same = all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        if (self.lmp is None) != (other.lmp is None):
            return False
        if self.lmp is not None:
            same = same and np.array_equal(self.lmp, other.lmp)
        return (same and self.removed_branch == other.removed_branch and self.seed == other.seed
                and self.iterations == other.iterations
                and (self.objective == other.objective
                     or (np.isnan(self.objective) and np.isnan(other.objective))))

    __hash__ = None


@dataclass(eq=False)
class Dataset:
    case_id: str
    mode: str
    seed: int
    samples: list
    split: dict | None = None
    trivial_always_on: frozenset = frozenset()
    trivial_always_off: frozenset = frozenset()
    rejected: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.case_id == other.case_id and self.mode == other.mode and self.seed == other.seed
            and self.samples == other.samples and self.split == other.split
            and self.trivial_always_on == other.trivial_always_on
            and self.trivial_always_off == other.trivial_always_off
            and self.rejected == other.rejected
        )

    __hash__ = None

    @property
    def n_ineq(self) -> int:
        return len(self.samples[0].active) if self.samples else 0

    @property
    def nontrivial(self) -> np.ndarray:
        """Inequality indices left for a classifier once trivial ones are removed."""
        drop = self.trivial_always_on | self.trivial_always_off
        return np.array([j for j in range(self.n_ineq) if j not in drop], dtype=int)

    def arrays(self, part: str | None = None, target: str = "y"):
        """Stacked (X, Y) for a split part; ``target`` is "y" (regression) or "active"."""
        idx = range(len(self.samples)) if part is None else self.split[part]
        rows = [self.samples[i] for i in idx]
        x = np.array([s.x for s in rows]).reshape(len(rows), -1)
        if target == "y":
            y = np.array([s.y_star for s in rows]).reshape(len(rows), -1)
        elif target == "active":
            y = np.array([s.active[self.nontrivial] for s in rows], dtype=float).reshape(len(rows), -1)
        else:
            raise ValueError(f"unknown target {target!r}")
        return x, y

    def removed(self, part: str | None = None) -> list:
        idx = range(len(self.samples)) if part is None else self.split[part]
        return [self.samples[i].removed_branch for i in idx]


# -- randomness -----------------------------------------------------------------

def derive_seed(root: int, *path: int) -> int:
    """Counter-based child seed: depends only on ``root`` and the index path."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def draw_factors(n_loads: int, seed) -> np.ndarray:
    """``2 * n_loads`` independent factors from U(0.8, 1.2): active parts, then reactive."""
    if n_loads < 1:
        raise ValueError("n_loads must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(FACTOR_LOW, FACTOR_HIGH, size=2 * n_loads)


# -- targets ------------------------------------------------------------------------

def target_vector(problem: OPFProblem, y) -> np.ndarray:
    """Regression target from a full variable vector: Pg, then Vm at generator buses."""
    y = np.asarray(y)
    return np.concatenate([y[problem.pg], y[problem.vm][problem.case.gen_buses]])


def start_from_target(problem: OPFProblem, t, margin: float = 1e-3):
    """Flat start with predicted Pg and generator-bus Vm scattered in and clipped.

    Returns ``(y0, n_clipped)``.
    """
    t = np.asarray(t, dtype=float)
    ng = problem.n_gen
    buses = problem.case.gen_buses
    if t.shape != (ng + len(buses),):
        raise ValueError(f"target has shape {t.shape}, expected ({ng + len(buses)},)")
    y = problem.flat_start(margin)
    y[problem.pg] = t[:ng]
    y[problem.vm.start + buses] = t[ng:]
    return problem.clip_to_bounds(y, margin)


# -- labelling ----------------------------------------------------------------------

def label(case: GridCase, factors, removed_branch=None, seed: int = 0, options=None):
    """Solve one scaled (and optionally contingent) case; ``None`` if not optimal."""
    nl = case.n_load
    f = np.asarray(factors, dtype=float)
    pd, qd = case.load_pd * f[:nl], case.load_qd * f[nl:]
    work = case.with_loads(pd, qd)
    if removed_branch is not None:
        out = remove_line(work, removed_branch)
        if not out.connected:
            return None
        work = out.case
    problem = assemble(work)
    sol = solve(problem, options=options)
    if not sol.optimal:
        return None
    return Sample(
        x=np.concatenate([pd, qd]),
        y_star=target_vector(problem, sol.y),
        active=sol.active_vector(problem.n_ineq),
        removed_branch=None if removed_branch is None else int(removed_branch),
        lmp=lmp(problem, sol),
        seed=int(seed),
        objective=float(sol.objective),
        iterations=int(sol.iterations),
    )


def sample_case(case: GridCase, sample: Sample) -> GridCase:
    """The scaled (and contingent) case a sample was labelled on."""
    nl = case.n_load
    work = case.with_loads(sample.x[:nl], sample.x[nl:])
    if sample.removed_branch is not None:
        work = remove_line(work, sample.removed_branch).case
    return work


def sample_problem(case: GridCase, sample: Sample) -> OPFProblem:
    return assemble(sample_case(case, sample))


def _one_sample(args):
    case, mode, root, i, candidates = args
    rejected = {"infeasible": 0, "islanding": 0}
    for attempt in range(MAX_ATTEMPTS):
        seed = derive_seed(root, i, attempt)
        rng = np.random.default_rng(seed)
        factors = draw_factors(case.n_load, rng)
        branch = None
        if mode == "contingency":
            branch = int(candidates[rng.integers(len(candidates))])
        sample = label(case, factors, branch, seed)
        if sample is not None:
            return sample, rejected, attempt + 1
        rejected["infeasible"] += 1
    return None, rejected, MAX_ATTEMPTS


def generate(case: GridCase, n: int, mode: str = "fixed", seed: int = 0, workers: int = 1) -> Dataset:
    """Draw ``n`` labelled samples. Infeasible draws are rejected and redrawn.

    Sample ``i`` uses seeds derived from ``(seed, i, attempt)`` only, so the
    result does not depend on ``workers``.
    """
    if mode not in ("fixed", "contingency"):
        raise ValueError(f"mode must be 'fixed' or 'contingency', got {mode!r}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    if case.n_load == 0:
        raise ValueError("case has no loads to re-scale")
    if not solve(assemble(case)).optimal:
        raise GenerationError(f"{case.name} is not solvable at nominal load", {})
    candidates = None
    if mode == "contingency":
        bridges = islanding_branches(case)
        candidates = np.array([k for k in np.flatnonzero(case.br_status) if k not in bridges], dtype=int)
        if len(candidates) == 0:
            raise ValueError("every in-service branch islands the grid")
    jobs = [(case, mode, seed, i, candidates) for i in range(n)]
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_sample, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        results = [_one_sample(j) for j in jobs]

    counts = {"infeasible": 0, "islanding": 0}
    attempts = 0
    samples = []
    for i, (sample, rejected, tries) in enumerate(results):
        for k, v in rejected.items():
            counts[k] += v
        attempts += tries
        if sample is None:
            raise GenerationError(f"sample {i}: no feasible draw in {MAX_ATTEMPTS} attempts", counts)
        samples.append(sample)
    rate = sum(counts.values()) / attempts if attempts else 0.0
    if rate > MAX_REJECTION_RATE:
        raise GenerationError(f"rejection rate {rate:.1%} exceeds {MAX_REJECTION_RATE:.0%}", counts)
    log.info("%s: %d samples, %d rejected draws", case.name, n, sum(counts.values()))
    return Dataset(case_id=case.name, mode=mode, seed=int(seed), samples=samples, rejected=counts)


# -- splitting ----------------------------------------------------------------------

def trivial_sets(samples) -> tuple[frozenset, frozenset]:
    """(always binding, never binding) inequality indices over ``samples``."""
    act = np.array([s.active for s in samples], dtype=bool)
    if act.size == 0:
        return frozenset(), frozenset()
    on = frozenset(int(j) for j in np.flatnonzero(act.all(axis=0)))
    off = frozenset(int(j) for j in np.flatnonzero(~act.any(axis=0)))
    return on, off


def split(dataset: Dataset, seed: int = 0) -> Dataset:
    """Random 80/10/10 split; trivial constraint sets come from the training part."""
    n = len(dataset)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    perm = np.random.default_rng(derive_seed(seed, 0)).permutation(n)
    n_train, n_val = int(round(0.8 * n)), int(round(0.1 * n))
    parts = {
        "train": sorted(int(i) for i in perm[:n_train]),
        "val": sorted(int(i) for i in perm[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in perm[n_train + n_val :]),
    }
    on, off = trivial_sets([dataset.samples[i] for i in parts["train"]])
    return Dataset(
        case_id=dataset.case_id, mode=dataset.mode, seed=dataset.seed, samples=dataset.samples,
        split=parts, trivial_always_on=on, trivial_always_off=off, rejected=dict(dataset.rejected),
    )
