"""Bus-level connectivity and the generator/load node graph."""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .case import GridCase

__all__ = [
    "Node",
    "TransformedGraph",
    "edge_weight",
    "transform_graph",
    "normalized_laplacian",
    "scaled_laplacian",
    "gcn_normalize",
    "bus_neighbors",
    "bfs_distances",
    "is_connected",
    "Contingency",
    "remove_line",
    "islanding_branches",
]


def edge_weight(z_abs, k: float):
    """Impedance-derived edge weight ``exp(-k * log|Z|)``.

    ``k=0`` gives a binary adjacency, ``k=1`` the admittance magnitude.
    """
    z = np.asarray(z_abs, dtype=float)
    if np.any(z <= 0):
        raise ValueError("impedance magnitude must be positive")
    w = np.exp(-k * np.log(z))
    return float(w) if w.ndim == 0 else w


# -- bus graph ---------------------------------------------------------------

def bus_neighbors(case: GridCase) -> list[set[int]]:
    nbrs = [set() for _ in range(case.n_bus)]
    for f, t in zip(case.br_from[case.br_status], case.br_to[case.br_status]):
        if f != t:
            nbrs[f].add(int(t))
            nbrs[t].add(int(f))
    return nbrs


def bfs_distances(case: GridCase, source: int, neighbors=None) -> np.ndarray:
    """Hop counts from ``source`` over in-service branches; -1 if unreachable."""
    nbrs = bus_neighbors(case) if neighbors is None else neighbors
    dist = np.full(case.n_bus, -1, dtype=int)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_connected(case: GridCase) -> bool:
    return bool(np.all(bfs_distances(case, 0) >= 0))


class Contingency(NamedTuple):
    case: GridCase
    connected: bool


def remove_line(case: GridCase, branch: int) -> Contingency:
    """Take one branch out of service. The input case is left untouched."""
    if not 0 <= branch < case.n_branch:
        raise IndexError(f"branch {branch} out of range (case has {case.n_branch})")
    if not case.br_status[branch]:
        raise ValueError(f"branch {branch} is already out of service")
    status = case.br_status.copy()
    status[branch] = False
    out = case.replace(br_status=status)
    return Contingency(out, is_connected(out))


def islanding_branches(case: GridCase) -> set[int]:
    """In-service branches whose removal disconnects the grid."""
    return {int(k) for k in np.flatnonzero(case.br_status) if not remove_line(case, k).connected}


# -- transformed graph --------------------------------------------------------

@dataclass(frozen=True)
class Node:
    kind: str  # "gen" or "load"
    source_id: int  # generator or load index in the case
    bus: int


@dataclass(frozen=True, eq=False)
class TransformedGraph:
    """One node per in-service generator (first) and per load (after)."""

    nodes: tuple
    edges: tuple  # (u, v, weight) with u < v
    adjacency: np.ndarray
    scaled_laplacian: np.ndarray
    connected: bool

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def gen_nodes(self) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.nodes) if n.kind == "gen"], dtype=int)

    @property
    def load_nodes(self) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.nodes) if n.kind == "load"], dtype=int)

    def gcn_adjacency(self) -> np.ndarray:
        return gcn_normalize(self.adjacency)

    def edge_index(self, self_loops: bool = True) -> np.ndarray:
        """Directed edge list (2, E) of the adjacency, optionally with self-loops."""
        src, dst = np.nonzero(self.adjacency)
        if self_loops:
            src = np.concatenate([src, np.arange(self.n_nodes)])
            dst = np.concatenate([dst, np.arange(self.n_nodes)])
        return np.stack([src, dst])


def _branch_impedance(case: GridCase) -> np.ndarray:
    return case.br_r + 1j * case.br_x


def _bus_pair_impedances(case: GridCase, hosts: np.ndarray) -> dict:
    """Impedances linking host buses, as {(i, j): [|Z|, ...]} with i < j.

    Direct branches contribute their own impedance. Paths through junction
    buses (no generator, no load) contribute the series impedance of the
    shortest such pass-through, measured by summed |Z|.
    """
    on = np.flatnonzero(case.br_status)
    z = _branch_impedance(case)
    adj = [[] for _ in range(case.n_bus)]
    pairs: dict = {}
    for k in on:
        f, t = int(case.br_from[k]), int(case.br_to[k])
        if f == t:
            continue
        adj[f].append((t, z[k]))
        adj[t].append((f, z[k]))
        if hosts[f] and hosts[t]:
            pairs.setdefault((min(f, t), max(f, t)), []).append(abs(z[k]))
    for s in np.flatnonzero(hosts):
        s = int(s)
        # Dijkstra on summed |Z|, expanding only through junction buses
        best = {s: 0.0}
        zsum = {s: 0j}
        heap = []
        for v, zk in adj[s]:
            if not hosts[v] and abs(zk) < best.get(v, np.inf):
                best[v], zsum[v] = abs(zk), zk
                heapq.heappush(heap, (abs(zk), v))
        reached: dict = {}
        while heap:
            d, u = heapq.heappop(heap)
            if d > best[u]:
                continue
            for v, zk in adj[u]:
                nd = d + abs(zk)
                if hosts[v]:
                    if v != s and nd < reached.get(v, (np.inf, 0j))[0]:
                        reached[v] = (nd, zsum[u] + zk)
                elif nd < best.get(v, np.inf):
                    best[v], zsum[v] = nd, zsum[u] + zk
                    heapq.heappush(heap, (nd, v))
        for t, (_, zt) in reached.items():
            if s < t:
                pairs.setdefault((s, t), []).append(abs(zt))
    return pairs


def transform_graph(case: GridCase, k: float = 0.0) -> TransformedGraph:
    """Build the generator/load node graph with impedance-based edge weights."""
    gens = case.active_gens
    nodes = tuple(Node("gen", int(g), int(case.gen_bus[g])) for g in gens) + tuple(
        Node("load", int(i), int(case.load_bus[i])) for i in range(case.n_load)
    )
    n = len(nodes)
    if n == 0:
        raise ValueError("empty grid: no generators or loads")
    by_bus: dict = {}
    for i, node in enumerate(nodes):
        by_bus.setdefault(node.bus, []).append(i)
    hosts = np.zeros(case.n_bus, dtype=bool)
    hosts[list(by_bus)] = True

    pairs = _bus_pair_impedances(case, hosts)
    adjacency = np.zeros((n, n))
    bus_max = np.zeros(case.n_bus)
    for (bi, bj), zs in pairs.items():
        z_eq = 1.0 / np.sum(1.0 / np.asarray(zs))
        w = edge_weight(z_eq, k)
        bus_max[bi] = max(bus_max[bi], w)
        bus_max[bj] = max(bus_max[bj], w)
        for u in by_bus[bi]:
            for v in by_bus[bj]:
                adjacency[u, v] = adjacency[v, u] = w
    for b, members in by_bus.items():
        w = bus_max[b] if bus_max[b] > 0 else 1.0
        for a in range(len(members)):
            for c in range(a + 1, len(members)):
                adjacency[members[a], members[c]] = adjacency[members[c], members[a]] = w

    iu, ju = np.nonzero(np.triu(adjacency, 1))
    edges = tuple((int(u), int(v), float(adjacency[u, v])) for u, v in zip(iu, ju))
    adjacency.setflags(write=False)
    lap = scaled_laplacian(adjacency)
    lap.setflags(write=False)
    return TransformedGraph(nodes, edges, adjacency, lap, _graph_connected(adjacency))


def _graph_connected(adjacency) -> bool:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adjacency[u]):
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


# -- graph operators ------------------------------------------------------------

def _with_isolated_loops(adjacency):
    a = np.array(adjacency, dtype=float)
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T):
        raise ValueError("adjacency must be a symmetric square matrix")
    if np.any(a < 0):
        raise ValueError("adjacency must be nonnegative")
    iso = a.sum(axis=1) == 0
    a[iso, iso] = 1.0
    return a


def normalized_laplacian(adjacency) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get a unit self-loop first."""
    a = _with_isolated_loops(adjacency)
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return np.eye(len(a)) - d[:, None] * a * d[None, :]


def _power_iteration(m, iters=1000, tol=1e-12):
    v = np.linspace(1.0, 2.0, len(m))
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v_new = w / nrm
        lam_new = float(v_new @ m @ v_new)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        v, lam = v_new, lam_new
    return lam


def scaled_laplacian(adjacency, lambda_max: float | str = 2.0) -> np.ndarray:
    """``2 L / lambda_max - I`` for the normalized Laplacian ``L``.

    ``lambda_max`` is either a number (the default 2 is the spectral bound of
    ``L``) or ``"power"`` to estimate it by power iteration.
    """
    lap = normalized_laplacian(adjacency)
    if lambda_max == "power":
        lam = _power_iteration(lap)
        lam = lam if lam > 0 else 2.0
    else:
        lam = float(lambda_max)
    return 2.0 * lap / lam - np.eye(len(lap))


def gcn_normalize(adjacency) -> np.ndarray:
    """``D~^-1/2 (A + I) D~^-1/2`` as used by first-order graph convolutions."""
    a = np.asarray(adjacency, dtype=float) + np.eye(len(adjacency))
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]
