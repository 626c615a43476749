"""Architecture zoo: FCNN, CNN and four graph-convolution families.

Channel schedules follow the grid-size scaling factors:
``sigma_s = 1`` for grids with at most 73 buses and 2 otherwise;
``sigma_m = 0.5`` for Chebyshev convolutions and 1 for the others.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..autodiff import (
    BatchNorm,
    ChebConv,
    Conv2d,
    Dense,
    GATConv,
    GCNConv,
    GraphConv,
    Tensor,
    concat,
    flatten,
    matmul,
    maxpool1d,
    relu,
    reshape,
    sigmoid,
    take,
)
from ..grid import GridCase, transform_graph

__all__ = [
    "FAMILIES",
    "GRAPH_FAMILIES",
    "VARIANTS",
    "TASKS",
    "ArchSpec",
    "CaseDims",
    "Network",
    "BudgetError",
    "build",
    "match_budget",
    "interpolate_widths",
    "round_half_up",
]

log = logging.getLogger(__name__)

FAMILIES = ("FCNN", "CNN", "GCN", "CHC", "GC", "GAT")
GRAPH_FAMILIES = ("GCN", "CHC", "GC", "GAT")
VARIANTS = ("global-1", "global-3", "local-3", "global-4")
TASKS = ("regression", "classification")
SMALL_GRID = 73
BUDGET_TOL = 0.10

_ALLOWED = {
    "FCNN": ("global-1", "global-3"),
    "CNN": ("global-4",),
    **{f: ("global-3", "local-3", "global-4") for f in GRAPH_FAMILIES},
}
_CONV = {"GCN": GCNConv, "CHC": ChebConv, "GC": GraphConv, "GAT": GATConv}


class BudgetError(ValueError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class ArchSpec:
    family: str
    variant: str
    task: str = "regression"
    k_edge: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.variant not in _ALLOWED[self.family]:
            raise ValueError(f"unknown combination {self.family}-{self.variant}")
        if self.variant == "local-3" and self.task != "regression":
            # local heads emit per-generator quantities; constraint labels have no node home
            raise ValueError(f"unknown combination {self.family}-{self.variant} for {self.task}")

    @classmethod
    def parse(cls, text: str, task: str = "regression", k_edge: float = 0.0) -> "ArchSpec":
        """``"GCN:global-3"`` or ``"GCN-global-3"``."""
        family, sep, variant = text.partition(":")
        if not sep:
            family, _, variant = text.partition("-")
        return cls(family.strip().upper(), variant.strip().lower(), task, k_edge)

    @property
    def name(self) -> str:
        return f"{self.family}-{self.variant}"

    @property
    def sigma_m(self) -> float:
        return 0.5 if self.family == "CHC" else 1.0

    def sigma_s(self, n_bus: int) -> int:
        return 1 if n_bus <= SMALL_GRID else 2

    @property
    def is_graph(self) -> bool:
        return self.family in GRAPH_FAMILIES


@dataclass(frozen=True, eq=False)
class CaseDims:
    """Sizes and index maps a network needs from its case."""

    case_id: str
    n_bus: int
    n_load: int
    n_gen: int
    n_nodes: int
    gen_nodes: np.ndarray  # node of each in-service generator
    load_nodes: np.ndarray  # node of each load
    vm_groups: tuple  # per generator bus: positions of its generators

    @classmethod
    def from_case(cls, case: GridCase) -> "CaseDims":
        g = transform_graph(case)
        gbus = case.gen_bus[case.active_gens]
        groups = tuple(np.flatnonzero(gbus == b) for b in case.gen_buses)
        return cls(case.name, case.n_bus, case.n_load, case.n_gen, g.n_nodes, g.gen_nodes, g.load_nodes, groups)

    @property
    def n_inputs(self) -> int:
        return 2 * self.n_load

    @property
    def n_targets(self) -> int:
        return self.n_gen + len(self.vm_groups)

    def head_maps(self):
        """(n_nodes, n_gen) selector for Pg and (n_nodes, n_gen_buses) averager for Vm."""
        sel = np.zeros((self.n_nodes, self.n_gen))
        sel[self.gen_nodes, np.arange(self.n_gen)] = 1.0
        avg = np.zeros((self.n_nodes, len(self.vm_groups)))
        for j, grp in enumerate(self.vm_groups):
            avg[self.gen_nodes[grp], j] = 1.0 / len(grp)
        return sel, avg


def interpolate_widths(n_in: int, n_out: int, n_hidden: int = 3, minimum: int = 4) -> tuple:
    """Hidden widths on the straight line from ``n_in`` to ``n_out`` (half-up, floor ``minimum``)."""
    return tuple(
        max(minimum, round_half_up(n_in + (n_out - n_in) * (i + 1) / (n_hidden + 1))) for i in range(n_hidden)
    )


def match_budget(n_ref: int, count, lo: int = 1, hi: int = 1 << 20, strict: bool = False, tol: float = BUDGET_TOL) -> int:
    """Smallest-error integer width ``w`` for a nondecreasing ``count(w)``.

    If no width lands within ``tol`` of ``n_ref`` the closest one is returned
    with a warning, or :class:`BudgetError` is raised when ``strict``.
    """
    if n_ref <= 0:
        raise ValueError("reference parameter count must be positive")
    a, b = lo, hi
    while a < b:  # first w with count(w) >= n_ref
        mid = (a + b) // 2
        if count(mid) < n_ref:
            a = mid + 1
        else:
            b = mid
    best = min({max(lo, a - 1), a}, key=lambda w: (abs(count(w) - n_ref), w))
    err = abs(count(best) - n_ref) / n_ref
    if err > tol:
        msg = f"no width within {tol:.0%} of {n_ref} parameters; best w={best} ({count(best)}, {err:.1%} off)"
        if strict:
            raise BudgetError(msg, best)
        log.warning(msg)
    return best


class Network:
    """Ordered blocks plus the forward pass for one architecture."""

    def __init__(self, spec: ArchSpec, dims: CaseDims, n_out: int, seed: int = 0, width: int | None = None):
        self.spec = spec
        self.dims = dims
        self.n_out = int(n_out)
        self.width = width
        self.blocks = []
        self._rng = np.random.default_rng(seed)
        self._plan = []
        getattr(self, "_build_" + spec.family.lower() if spec.family in ("FCNN", "CNN") else "_build_graph")()
        del self._rng
        # a zero output layer starts training from the mean predictor
        for p in self.blocks[-1].params.values():
            p.data[...] = 0.0

    # -- construction ---------------------------------------------------------------
    def _add(self, block, kind=None):
        self.blocks.append(block)
        self._plan.append((kind or block.kind, block))
        return block

    def _dense(self, c_in, c_out, hidden=True, axis=-1):
        i = len(self.blocks)
        self._add(Dense(f"b{i:02d}_dense", c_in, c_out, self._rng))
        if hidden:
            self._hidden(c_out, axis)

    def _hidden(self, c, axis=-1):
        self._add(BatchNorm(f"b{len(self.blocks):02d}_bn", c, axis=axis))
        self._plan.append(("relu", None))

    def _build_fcnn(self):
        d, out = self.dims, self.n_out
        if self.spec.variant == "global-1":
            if self.width is None:
                raise ValueError("FCNN-global-1 needs a hidden width (see match_budget)")
            widths = (self.width,)
        else:
            widths = interpolate_widths(d.n_inputs, out)
        prev = d.n_inputs
        for w in widths:
            self._dense(prev, w)
            prev = w
        self._dense(prev, out, hidden=False)

    def _build_cnn(self):
        h = self.dims.n_nodes
        prev = 2
        for c in (4, 8, 16):
            self._add(Conv2d(f"b{len(self.blocks):02d}_conv", prev, c, self._rng))
            self._hidden(c, axis=1)
            if h >= 2:
                self._plan.append(("pool", None))
                h = -(-h // 2)
            prev = c
        self._plan.append(("flatten", None))
        flat = prev * h * self.dims.n_nodes
        if self.width is None:
            raise ValueError("CNN-global-4 needs a readout width (see match_budget)")
        self._dense(flat, self.width)
        self._dense(self.width, self.n_out, hidden=False)

    def _build_graph(self):
        spec, d = self.spec, self.dims
        conv = _CONV[spec.family]
        ss, sm = spec.sigma_s(d.n_bus), spec.sigma_m

        def add_conv(c_in, c_out, hidden=True):
            self._add(conv(f"b{len(self.blocks):02d}_{conv.kind}", c_in, c_out, self._rng), "conv")
            if hidden:
                self._hidden(c_out)
            return c_out

        if spec.variant == "global-3":
            c = add_conv(2, 8 * ss)
            c = add_conv(c, 16 * ss)
            self._plan.append(("flatten", None))
            self._dense(c * d.n_nodes, self.n_out, hidden=False)
            return
        # local stack: two convolutions, node-wise expansion, 2-channel head
        c = add_conv(2, 8)
        c = add_conv(c, max(1, round_half_up(d.n_nodes * sm)))
        wide = max(1, round_half_up(d.n_targets * ss * sm))
        self._dense(c, wide)
        add_conv(wide, 2, hidden=False)
        if spec.variant == "local-3":
            self._plan.append(("gen_head", None))
        else:
            self._plan.append(("flatten", None))
            self._dense(2 * d.n_nodes, self.n_out, hidden=False)

    # -- introspection -----------------------------------------------------------------
    @property
    def n_params(self) -> int:
        return sum(b.n_params for b in self.blocks)

    def named_params(self) -> dict:
        return {f"{b.name}.{k}": p for b in self.blocks for k, p in b.params.items()}

    def named_buffers(self) -> dict:
        return {f"{b.name}.{k}": v for b in self.blocks for k, v in b.buffers().items()}

    def state(self) -> dict:
        """Copies of every parameter and buffer, keyed by block-qualified name."""
        out = {k: p.data.copy() for k, p in self.named_params().items()}
        out.update({k: np.array(v, copy=True) for k, v in self.named_buffers().items()})
        return out

    def load_state(self, state: dict):
        params = self.named_params()
        missing = set(params) | set(self.named_buffers())
        missing -= set(state)
        if missing:
            raise KeyError(f"state is missing blocks {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"block {k}: stored shape {state[k].shape} does not match {p.shape}")
            p.data[...] = state[k]
        for b in self.blocks:
            bufs = b.buffers()
            if bufs:
                b.set_buffers({k: state[f"{b.name}.{k}"] for k in bufs})

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.named_params().values()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (self.n_params,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({self.n_params},)")
        pos = 0
        for p in self.named_params().values():
            p.data[...] = flat[pos : pos + p.data.size].reshape(p.shape)
            pos += p.data.size

    def layers(self) -> list:
        """Ordered (block name, kind, {param: shape}) rows."""
        return [(b.name, b.kind, b.shapes()) for b in self.blocks]

    def manifest(self) -> dict:
        return {
            "family": self.spec.family,
            "variant": self.spec.variant,
            "task": self.spec.task,
            "k_edge": self.spec.k_edge,
            "case_id": self.dims.case_id,
            "n_out": self.n_out,
            "width": self.width,
            "n_params": self.n_params,
            "layers": [{"name": n, "kind": k, "shapes": s} for n, k, s in self.layers()],
        }

    # -- forward ---------------------------------------------------------------------------
    def forward(self, inputs, training: bool = False) -> Tensor:
        """Run the network.

        ``inputs`` is the adapter output: an array (FCNN, CNN) or a pair
        ``(node_features, graph)`` for graph families, where ``graph`` maps
        operator names to (n, n) or (B, n, n) arrays.
        """
        graph = None
        if self.spec.is_graph:
            x, graph = inputs
        else:
            x = inputs
        h = x if isinstance(x, Tensor) else Tensor(x)
        for kind, block in self._plan:
            if kind == "conv":
                h = block(h, graph)
            elif kind == "batchnorm":
                h = block(h, training)
            elif kind in ("dense", "conv2d"):
                h = block(h)
            elif kind == "relu":
                h = relu(h)
            elif kind == "pool":
                h = maxpool1d(h, 2, axis=2, ceil=True)
            elif kind == "flatten":
                h = flatten(h, 1)
            elif kind == "gen_head":
                h = self._gen_head(h)
        if self.spec.task == "classification":
            h = sigmoid(h)
        return h

    def _gen_head(self, h: Tensor) -> Tensor:
        sel, avg = self.dims.head_maps()
        lead = h.shape[:-2]
        pg = reshape(matmul(_channel(h, 0), sel), lead + (sel.shape[1],))
        vm = reshape(matmul(_channel(h, 1), avg), lead + (avg.shape[1],))
        return concat([pg, vm], axis=-1)


def _channel(h: Tensor, c: int) -> Tensor:
    """(B, n, C) -> (B, 1, n) view of channel ``c``, ready for a right matmul."""
    return reshape(take(h, [c], axis=-1), h.shape[:-2] + (1, h.shape[-2]))


def build(spec: ArchSpec, dims: CaseDims, n_out: int, seed: int = 0, width: int | None = None) -> Network:
    """Build a network; FCNN-global-1 and CNN widths default to parity with GCN-global-3."""
    if spec.family in ("FCNN", "CNN") and width is None and (spec.family == "CNN" or spec.variant == "global-1"):
        width = budget_width(spec, dims, n_out)
    return Network(spec, dims, n_out, seed=seed, width=width)


def budget_width(spec: ArchSpec, dims: CaseDims, n_out: int) -> int:
    anchor = Network(ArchSpec("GCN", "global-3", spec.task, spec.k_edge), dims, n_out).n_params
    # the count is affine in the width, so two small builds give it exactly
    c1 = Network(spec, dims, n_out, width=1).n_params
    step = Network(spec, dims, n_out, width=2).n_params - c1
    return match_budget(anchor, lambda w: c1 + (w - 1) * step, hi=1 << 24)
