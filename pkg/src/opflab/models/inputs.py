"""Input adapters: load vector, pseudo-image, or node features plus graph."""
from __future__ import annotations

import numpy as np

from ..grid import GridCase, gcn_normalize, remove_line, transform_graph
from .arch import ArchSpec, CaseDims

__all__ = ["GraphCache", "InputAdapter", "node_features", "pseudo_image"]


def node_features(x, dims: CaseDims) -> np.ndarray:
    """(B, 2 * n_load) loads to (B, n_nodes, 2) features; generator nodes stay zero."""
    x = np.asarray(x, dtype=float)
    nl = dims.n_load
    f = np.zeros((x.shape[0], dims.n_nodes, 2))
    f[:, dims.load_nodes, 0] = x[:, :nl]
    f[:, dims.load_nodes, 1] = x[:, nl:]
    return f


def pseudo_image(features, adjacency) -> np.ndarray:
    """Channel ``c`` of sample ``b`` is ``A[i, j] * features[j, c]``: shape (B, 2, n, n)."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim == 2:
        return np.einsum("ij,bjc->bcij", a, features)
    return np.einsum("bij,bjc->bcij", a, features)


class GraphCache:
    """Per-topology graph operators, keyed by the removed branch (None = base case)."""

    def __init__(self, case: GridCase, k_edge: float = 0.0):
        self.case = case
        self.k_edge = float(k_edge)
        self._graphs = {}

    def graph(self, removed):
        key = None if removed is None else int(removed)
        g = self._graphs.get(key)
        if g is None:
            work = self.case if key is None else remove_line(self.case, key).case
            g = transform_graph(work, self.k_edge)
            if self._graphs and g.n_nodes != len(next(iter(self._graphs.values()))["adj"]):
                raise ValueError(f"branch {key} changes the node count to {g.n_nodes}")
            a = np.asarray(g.adjacency)
            mask = a > 0
            np.fill_diagonal(mask, True)
            g = {
                "adj": a,
                "a_hat": gcn_normalize(a),
                "lap": np.asarray(g.scaled_laplacian),
                "mask": mask,
            }
            self._graphs[key] = g
        return g

    def batch(self, removed, key: str):
        """Shared (n, n) operator when every sample has the same topology, else (B, n, n)."""
        removed = list(removed)
        first = removed[0] if removed else None
        if all(r == first for r in removed):
            return self.graph(first)[key]
        return np.stack([self.graph(r)[key] for r in removed])


_OPERATOR = {"GCN": "a_hat", "CHC": "lap", "GC": "adj", "GAT": "mask"}


class InputAdapter:
    """Turns standardized load vectors (and topologies) into network inputs."""

    def __init__(self, case: GridCase, spec: ArchSpec, dims: CaseDims | None = None):
        self.spec = spec
        self.dims = dims or CaseDims.from_case(case)
        self.cache = GraphCache(case, spec.k_edge)
        self.cache.graph(None)

    def __call__(self, x, removed=None):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dims.n_inputs:
            raise ValueError(f"expected loads of shape (B, {self.dims.n_inputs}), got {x.shape}")
        if removed is None:
            removed = [None] * len(x)
        elif len(removed) != len(x):
            raise ValueError(f"{len(removed)} topologies for {len(x)} samples")
        fam = self.spec.family
        if fam == "FCNN":
            # topology is invisible to a plain fully connected model
            return x
        feats = node_features(x, self.dims)
        if fam == "CNN":
            return pseudo_image(feats, self.cache.batch(removed, "adj"))
        return feats, {_OPERATOR[fam]: self.cache.batch(removed, _OPERATOR[fam])}
