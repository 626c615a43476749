"""Graph convolutions and parameter blocks built on the tensor ops.

Node features are laid out as (..., n, c): an optional batch axis, then
nodes, then channels. Graph operators are (n, n) or batched (B, n, n).
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    BatchNormState,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    batchnorm,
    conv2d,
    leaky_relu,
    masked_softmax,
    matmul,
    reshape,
    take,
    transpose,
)

__all__ = [
    "gcn_layer",
    "cheb_layer",
    "graphconv_layer",
    "gat_layer",
    "edge_mask",
    "Block",
    "Dense",
    "GCNConv",
    "ChebConv",
    "GraphConv",
    "GATConv",
    "Conv2d",
    "BatchNorm",
]


def _check_graph(x: Tensor, op, name: str):
    n = x.shape[-2]
    if op.shape[-1] != n or op.shape[-2] != n:
        raise ShapeError(f"{name}: features {x.shape} do not match graph operator {op.shape}")


def _check_weight(x: Tensor, w: Tensor, name: str):
    if w.ndim != 2 or w.shape[0] != x.shape[-1]:
        raise ShapeError(f"{name}: features {x.shape} do not match weight {w.shape}")


def gcn_layer(x, a_hat, w) -> Tensor:
    """First-order graph convolution ``Â X W``."""
    x, a_hat, w = as_tensor(x), as_tensor(a_hat), as_tensor(w)
    _check_graph(x, a_hat, "gcn_layer")
    _check_weight(x, w, "gcn_layer")
    return matmul(a_hat, matmul(x, w))


def cheb_layer(x, lap, weights) -> Tensor:
    """``sum_k T_k(L) X W_k`` with the Chebyshev recurrence; K = len(weights)."""
    x, lap = as_tensor(x), as_tensor(lap)
    weights = [as_tensor(w) for w in weights]
    if not weights:
        raise ValueError("cheb_layer needs at least one weight bank")
    _check_graph(x, lap, "cheb_layer")
    for w in weights:
        _check_weight(x, w, "cheb_layer")
    t_prev, t_cur = None, x
    out = matmul(x, weights[0])
    for k in range(1, len(weights)):
        if k == 1:
            t_next = matmul(lap, x)
        else:
            t_next = matmul(lap, t_cur) * 2.0 - t_prev
        t_prev, t_cur = t_cur, t_next
        out = out + matmul(t_cur, weights[k])
    return out


def graphconv_layer(x, adj, w_neigh, w_self) -> Tensor:
    """``A X W_neigh + X W_self`` with the raw (weighted) adjacency."""
    x, adj, w_neigh, w_self = (as_tensor(v) for v in (x, adj, w_neigh, w_self))
    _check_graph(x, adj, "graphconv_layer")
    _check_weight(x, w_neigh, "graphconv_layer")
    _check_weight(x, w_self, "graphconv_layer")
    return matmul(adj, matmul(x, w_neigh)) + matmul(x, w_self)


def edge_mask(edges, n: int) -> np.ndarray:
    """Dense (n, n) mask with ``mask[dst, src]`` set for each directed edge."""
    e = np.asarray(edges, dtype=int)
    if e.ndim != 2 or e.shape[0] != 2:
        raise ShapeError(f"edge list must have shape (2, E), got {e.shape}")
    if e.size and (e.min() < 0 or e.max() >= n):
        raise ShapeError(f"edge list refers to nodes outside 0..{n - 1}")
    mask = np.zeros((n, n), dtype=bool)
    mask[e[1], e[0]] = True
    return mask


def gat_layer(x, edges, w, att, slope: float = 0.2, return_attention: bool = False):
    """Single-head graph attention.

    ``edges`` is a (2, E) source/target list or a boolean mask of shape
    (n, n) or (B, n, n) with ``mask[i, j]`` meaning j sends to i. Self-loops
    must be present. ``att`` has shape (2 * c_out,): target half first.
    """
    x, w, att = as_tensor(x), as_tensor(w), as_tensor(att)
    _check_weight(x, w, "gat_layer")
    n, c = x.shape[-2], w.shape[1]
    if att.shape != (2 * c,):
        raise ShapeError(f"gat_layer: attention vector {att.shape} does not match {c} output channels")
    e = np.asarray(edges)
    mask = e if e.dtype == bool else edge_mask(e, n)
    if mask.shape[-1] != n or mask.shape[-2] != n:
        raise ShapeError(f"gat_layer: features {x.shape} do not match edge mask {mask.shape}")
    if not np.all(np.diagonal(mask, axis1=-2, axis2=-1)):
        raise ValueError("gat_layer: every node needs a self-loop")
    h = matmul(x, w)
    s_dst = matmul(h, _column(att, 0, c))
    s_src = matmul(h, _column(att, c, 2 * c))
    scores = leaky_relu(s_dst + transpose(s_src, _swap_last(s_src.ndim)), slope)
    alpha = masked_softmax(scores, mask, axis=-1)
    out = matmul(alpha, h)
    return (out, alpha) if return_attention else out


def _column(v: Tensor, lo: int, hi: int) -> Tensor:
    return reshape(take(v, np.arange(lo, hi), axis=0), (hi - lo, 1))


def _swap_last(ndim: int):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return axes


# -- parameter blocks -----------------------------------------------------------------

def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


class Block:
    """A named group of trainable tensors (and optional non-trainable buffers)."""

    kind = "block"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Tensor] = {}

    def _param(self, key, value):
        t = Tensor(value, requires_grad=True, name=f"{self.name}.{key}")
        self.params[key] = t
        return t

    def buffers(self) -> dict:
        return {}

    def set_buffers(self, values: dict):
        if values:
            raise KeyError(f"{self.name} has no buffers")

    @property
    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def shapes(self) -> dict:
        return {k: list(p.shape) for k, p in self.params.items()}


class Dense(Block):
    kind = "dense"

    def __init__(self, name, c_in, c_out, rng):
        super().__init__(name)
        self.w = self._param("weight", _glorot(rng, c_in, c_out, (c_in, c_out)))
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x):
        x = as_tensor(x)
        _check_weight(x, self.w, self.name)
        return add(matmul(x, self.w), self.b)


class GCNConv(Block):
    kind = "gcn"

    def __init__(self, name, c_in, c_out, rng):
        super().__init__(name)
        self.w = self._param("weight", _glorot(rng, c_in, c_out, (c_in, c_out)))
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x, graph):
        return add(gcn_layer(x, graph["a_hat"], self.w), self.b)


class ChebConv(Block):
    kind = "cheb"

    def __init__(self, name, c_in, c_out, rng, k: int = 4):
        super().__init__(name)
        self.k = k
        self.ws = [self._param(f"weight{i}", _glorot(rng, c_in, c_out, (c_in, c_out))) for i in range(k)]
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x, graph):
        return add(cheb_layer(x, graph["lap"], self.ws), self.b)


class GraphConv(Block):
    kind = "graphconv"

    def __init__(self, name, c_in, c_out, rng):
        super().__init__(name)
        self.w_neigh = self._param("weight_neigh", _glorot(rng, c_in, c_out, (c_in, c_out)))
        self.w_self = self._param("weight_self", _glorot(rng, c_in, c_out, (c_in, c_out)))
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x, graph):
        return add(graphconv_layer(x, graph["adj"], self.w_neigh, self.w_self), self.b)


class GATConv(Block):
    kind = "gat"

    def __init__(self, name, c_in, c_out, rng, slope: float = 0.2):
        super().__init__(name)
        self.slope = slope
        self.w = self._param("weight", _glorot(rng, c_in, c_out, (c_in, c_out)))
        self.att = self._param("att", _glorot(rng, c_out, 1, (2 * c_out,)))
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x, graph):
        return add(gat_layer(x, graph["mask"], self.w, self.att, self.slope), self.b)


class Conv2d(Block):
    """``k x 1`` convolution over NCHW images."""

    kind = "conv2d"

    def __init__(self, name, c_in, c_out, rng, k: int = 3):
        super().__init__(name)
        self.w = self._param("weight", _glorot(rng, c_in * k, c_out * k, (c_out, c_in, k, 1)))
        self.b = self._param("bias", np.zeros(c_out))

    def __call__(self, x):
        return conv2d(x, self.w, self.b)


class BatchNorm(Block):
    kind = "batchnorm"

    def __init__(self, name, channels, axis: int = -1, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__(name)
        self.axis = axis
        self.gamma = self._param("gamma", np.ones(channels))
        self.beta = self._param("beta", np.zeros(channels))
        self.state = BatchNormState(channels, momentum, eps)

    def __call__(self, x, training: bool):
        return batchnorm(x, self.gamma, self.beta, self.state, training, self.axis)

    def buffers(self) -> dict:
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}

    def set_buffers(self, values: dict):
        self.state.running_mean = np.array(values["running_mean"], dtype=float)
        self.state.running_var = np.array(values["running_var"], dtype=float)
