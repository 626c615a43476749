"""Finite-difference load sensitivities grouped by hop distance.

Each configuration re-scales every load with the dataset recipe, solves,
then raises one load's active demand by 1% at a time and records the
absolute relative change of every generator's Pg and every bus's Vm and
LMP. Distances are BFS hops on the bus graph. Disconnected grids are
solved island by island, so a perturbation never reaches another island.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ..grid import GridCase, bfs_distances, bus_neighbors
from ..opf import assemble, lmp, solve
from ..pipelines.reports import write_csv
from ..pipelines.training import t_half_width
from ..sampling import derive_seed, draw_factors

__all__ = [
    "KINDS",
    "GUARD",
    "SensitivityRecord",
    "SensitivityRun",
    "islands",
    "island_case",
    "solve_islands",
    "sensitivity_run",
    "aggregate",
    "distance_histogram",
    "write_aggregate_csv",
    "write_plot_data",
]

log = logging.getLogger(__name__)

KINDS = ("vm", "pg", "lmp")
GUARD = 1e-8
MAX_ATTEMPTS = 50


class SensitivityRecord(NamedTuple):
    config: int
    load: int
    kind: str
    target: int
    distance: int  # -1 when the target is unreachable from the load
    value: float
    guarded: bool = False


class SensitivityRun(NamedTuple):
    records: list
    missing: list  # (config, load) pairs whose perturbed solve failed
    skipped: list  # loads with zero active demand


# -- islands ----------------------------------------------------------------------

def islands(case: GridCase) -> list:
    """Sorted bus lists of the connected components (in-service branches)."""
    nbrs = bus_neighbors(case)
    seen = np.zeros(case.n_bus, dtype=bool)
    out = []
    for s in range(case.n_bus):
        if seen[s]:
            continue
        comp, stack = [], [s]
        seen[s] = True
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in nbrs[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        out.append(sorted(comp))
    return out


def island_case(case: GridCase, buses):
    """Sub-case on ``buses`` plus index maps (loads, generators) back to the parent.

    If the island has no reference bus, the bus of its largest generator
    becomes one.
    """
    buses = np.asarray(sorted(buses), dtype=int)
    pos = -np.ones(case.n_bus, dtype=int)
    pos[buses] = np.arange(len(buses))
    loads = np.flatnonzero(pos[case.load_bus] >= 0)
    gens = np.flatnonzero(pos[case.gen_bus] >= 0)
    brs = np.flatnonzero((pos[case.br_from] >= 0) & (pos[case.br_to] >= 0))
    btype = case.bus_type[buses].copy()
    if not np.any(btype == 3):
        live = [g for g in gens if case.gen_status[g]]
        if not live:
            raise ValueError("island without an in-service generator")
        big = max(live, key=lambda g: case.pg_max[g])
        btype[pos[case.gen_bus[big]]] = 3
    sub = case.replace(
        name=f"{case.name}_island{int(buses[0])}",
        bus_ids=case.bus_ids[buses], bus_type=btype, vm_min=case.vm_min[buses], vm_max=case.vm_max[buses],
        gs=case.gs[buses], bs=case.bs[buses],
        load_bus=pos[case.load_bus[loads]], load_pd=case.load_pd[loads], load_qd=case.load_qd[loads],
        gen_bus=pos[case.gen_bus[gens]], gen_status=case.gen_status[gens], pg_min=case.pg_min[gens],
        pg_max=case.pg_max[gens], qg_min=case.qg_min[gens], qg_max=case.qg_max[gens],
        gen_cost=case.gen_cost[gens],
        br_from=pos[case.br_from[brs]], br_to=pos[case.br_to[brs]], br_r=case.br_r[brs], br_x=case.br_x[brs],
        br_b=case.br_b[brs], rate_a=case.rate_a[brs], tap=case.tap[brs], shift=case.shift[brs],
        br_status=case.br_status[brs],
    )
    return sub, buses, loads, gens


def _solve_part(case: GridCase, part, y0=None):
    """(vm, lmp, pg over the island's generators, y) for one island, or None.

    A failed warm start is retried from the flat start.
    """
    sub, buses, loads, gens = part
    p = assemble(sub.with_loads(case.load_pd[loads], case.load_qd[loads]))
    sol = solve(p, y0=y0)
    if not sol.optimal and y0 is not None:
        sol = solve(p)
    if not sol.optimal:
        return None
    return sol.y[p.vm], lmp(p, sol), gens[p.gen_index], sol.y[p.pg], sol.y


def _combine(case, parts, results):
    vm = np.zeros(case.n_bus)
    price = np.zeros(case.n_bus)
    pg_all = np.zeros(len(case.gen_bus))
    for (sub, buses, loads, gens), (v, l, g, pg, _) in zip(parts, results):
        vm[buses] = v
        price[buses] = l
        pg_all[g] = pg
    return {"vm": vm, "pg": pg_all[case.active_gens], "lmp": price}


def solve_islands(case: GridCase, y_prev=None, parts=None, only=None, base=None):
    """Solve every island; returns per-bus Vm and LMP, per-in-service-gen Pg, and states.

    ``None`` if any island fails. ``y_prev`` (from an earlier call) warm-starts
    each island. With ``only`` (an island index) and ``base`` (the per-island
    results of an earlier call) just that island is re-solved, so the others
    keep their values bit for bit.
    """
    parts = parts or [island_case(case, b) for b in islands(case)]
    results = []
    for k, part in enumerate(parts):
        if only is not None and k != only:
            results.append(base[k])
            continue
        r = _solve_part(case, part, None if y_prev is None else y_prev[k])
        if r is None:
            return None
        results.append(r)
    return _combine(case, parts, results), results


# -- sensitivities ------------------------------------------------------------------

def _relative(new, base):
    den = np.abs(base)
    guarded = den < GUARD
    return np.abs(new - base) / np.maximum(den, GUARD), guarded


def _config(args):
    case, seed, cfg, step, dist_bus = args
    parts = [island_case(case, b) for b in islands(case)]
    for attempt in range(MAX_ATTEMPTS):
        f = draw_factors(case.n_load, derive_seed(seed, cfg, attempt))
        work = case.with_loads(case.load_pd * f[: case.n_load], case.load_qd * f[case.n_load :])
        out = solve_islands(work, parts=parts)
        if out is not None:
            break
    else:
        raise RuntimeError(f"configuration {cfg}: no feasible load draw")
    base, results = out
    states = [r[-1] for r in results]
    home = {int(b): k for k, (_, buses, _, _) in enumerate(parts) for b in buses}
    gen_bus = case.gen_bus[case.active_gens]
    targets = {"vm": np.arange(case.n_bus), "pg": gen_bus, "lmp": np.arange(case.n_bus)}
    records, missing, skipped = [], [], []
    for i in range(case.n_load):
        if work.load_pd[i] == 0:
            skipped.append(i)
            continue
        pd = work.load_pd.copy()
        pd[i] *= 1.0 + step
        pert = solve_islands(work.with_loads(pd, work.load_qd), y_prev=states, parts=parts,
                             only=home[int(case.load_bus[i])], base=results)
        if pert is None:
            missing.append((cfg, i))
            continue
        new = pert[0]
        d = dist_bus[case.load_bus[i]]
        for kind in KINDS:
            val, guard = _relative(new[kind], base[kind])
            dist = d[targets[kind]]
            for j in range(len(val)):
                records.append(SensitivityRecord(cfg, i, kind, j, int(dist[j]), float(val[j]), bool(guard[j])))
    return records, missing, skipped


def sensitivity_run(case: GridCase, n_configs: int = 100, seed: int = 0, step: float = 0.01,
                    workers: int = 1) -> SensitivityRun:
    """Perturb each load's Pd by ``step`` in ``n_configs`` re-scaled configurations."""
    if n_configs < 1:
        raise ValueError("n_configs must be at least 1")
    nbrs = bus_neighbors(case)
    dist_bus = np.array([bfs_distances(case, b, nbrs) for b in range(case.n_bus)])
    jobs = [(case, seed, c, step, dist_bus) for c in range(n_configs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_config, jobs))
    else:
        results = [_config(j) for j in jobs]
    records, missing, skipped = [], [], set()
    for r, m, s in results:
        records.extend(r)
        missing.extend(m)
        skipped.update(s)
    if missing:
        log.warning("%d perturbed solves failed", len(missing))
    return SensitivityRun(records, missing, sorted(skipped))


def aggregate(records) -> list:
    """Rows (kind, distance, mean, ci_half, n) sorted by kind order then distance.

    ``ci_half`` is NaN for groups with a single record.
    """
    groups = defaultdict(list)
    for r in records:
        groups[(r.kind, r.distance)].append(r.value)
    order = {k: i for i, k in enumerate(KINDS)}
    rows = []
    for (kind, dist) in sorted(groups, key=lambda k: (order.get(k[0], len(order)), k[0], k[1])):
        v = np.sort(np.asarray(groups[(kind, dist)]))
        # fsum is exact, so the mean is independent of record order
        rows.append((kind, dist, math.fsum(v) / v.size, _half_width(v), int(v.size)))
    return rows


def _half_width(v):
    if v.size > 1 and v[0] == v[-1]:
        return 0.0
    return t_half_width(v)


def distance_histogram(case: GridCase) -> dict:
    """{distance: count} over (load, in-service generator) pairs; key -1 counts unreachable pairs."""
    nbrs = bus_neighbors(case)
    gen_bus = case.gen_bus[case.active_gens]
    counts = Counter()
    cache = {}
    for b in case.load_bus:
        b = int(b)
        if b not in cache:
            cache[b] = bfs_distances(case, b, nbrs)
        for v in cache[b][gen_bus]:
            counts[int(v)] += 1
    return dict(sorted(counts.items()))


def write_aggregate_csv(rows, path=None) -> str:
    return write_csv(["kind", "distance", "mean", "ci_half", "n"],
                     [(k, d, m, "" if np.isnan(c) else c, n) for k, d, m, c, n in rows], path)


def write_plot_data(rows, directory) -> list:
    """One whitespace-separated file per kind: distance, mean, ci_half."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind in KINDS:
        lines = ["# distance mean ci_half n"]
        lines += [f"{d} {m!r} {c!r} {n}" for k, d, m, c, n in rows if k == kind]
        p = out / f"sensitivity_{kind}.dat"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p)
    return paths
