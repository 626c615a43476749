"""Dense float64 tensors with a reverse-mode tape.

Every op returns a new :class:`Tensor` holding its parents and a closure
that pushes the output gradient back to them. ``backward`` walks the tape
in reverse topological order. The tape is rebuilt on every forward pass.
"""
from __future__ import annotations

import contextlib

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tsum",
    "mean",
    "reshape",
    "transpose",
    "flatten",
    "concat",
    "take",
    "conv2d",
    "maxpool1d",
    "batchnorm",
    "masked_softmax",
    "BatchNormState",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the tape."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None

    # -- basics ---------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable ``requires_grad`` tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accum(self, np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators --------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g


def _make(value, parents, backward) -> Tensor:
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)

        def push(g):
            for p, gp in zip(parents, backward(g)):
                if gp is not None and p.requires_grad:
                    _accum(p, gp)

        out._backward = push
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ---------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, slope * a.data), (a,), lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


# -- reductions and reshaping ------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def flatten(a, start: int = 1) -> Tensor:
    a = as_tensor(a)
    return reshape(a, a.shape[:start] + (-1,))


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a, index, axis: int) -> Tensor:
    """Select positions ``index`` along ``axis`` (gradient scatters back)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=int)

    def back(g):
        out = np.zeros(a.shape)
        np.add.at(out, (slice(None),) * (axis % a.ndim) + (index,), g)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), back)


# -- products -------------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product with NumPy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back)


def conv2d(x, w, b=None) -> Tensor:
    """``k x 1`` convolution over NCHW input, stride 1, zero padding (odd ``k``).

    ``w`` has shape (C_out, C_in, k, 1); ``b`` has shape (C_out,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[3] != 1 or w.shape[2] % 2 == 0:
        raise ShapeError(f"conv2d: expected NCHW input and (O, C, odd k, 1) kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match kernel {w.shape}")
    k = w.shape[2]
    pad = k // 2
    h = x.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    cols = np.stack([xp[:, :, i : i + h, :] for i in range(k)])  # (k, B, C, H, W)
    kern = w.data[:, :, :, 0]
    out = np.einsum("ock,kbchw->bohw", kern, cols, optimize=True)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} output channels")
        out = out + b.data[None, :, None, None]
        parents.append(b)

    def back(g):
        gw = np.einsum("bohw,kbchw->ock", g, cols, optimize=True)[:, :, :, None]
        gcols = np.einsum("ock,bohw->kbchw", kern, g, optimize=True)
        gxp = np.zeros(xp.shape)
        for i in range(k):
            gxp[:, :, i : i + h, :] += gcols[i]
        grads = [gxp[:, :, pad : pad + h, :], gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out, parents, back)


def maxpool1d(x, width: int = 2, axis: int = 2, ceil: bool = False) -> Tensor:
    """Non-overlapping max pooling of ``width`` along one axis.

    A trailing partial window is dropped, or pooled on its own when ``ceil``.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    length = x.shape[axis]
    n = -(-length // width) if ceil else length // width
    if n == 0:
        raise ShapeError(f"maxpool1d: axis {axis} of {x.shape} is shorter than width {width}")
    moved = np.moveaxis(x.data, axis, -1)
    used = min(length, n * width)
    if n * width > length:
        pad = [(0, 0)] * (moved.ndim - 1) + [(0, n * width - length)]
        moved = np.pad(moved, pad, constant_values=-np.inf)
    else:
        moved = moved[..., : n * width]
    blocks = moved.reshape(moved.shape[:-1] + (n, width))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gm = np.moveaxis(g, axis, -1)
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], gm[..., None], axis=-1)
        full = np.zeros(np.moveaxis(x.data, axis, -1).shape)
        full[..., :used] = gb.reshape(gb.shape[:-2] + (n * width,))[..., :used]
        return (np.moveaxis(full, -1, axis),)

    return _make(np.moveaxis(out, -1, axis), (x,), back)


# -- normalization and attention ----------------------------------------------------------------

class BatchNormState:
    """Running statistics of one BatchNorm block (updated in training passes only)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool, axis: int = -1) -> Tensor:
    """Per-channel normalization over every axis except ``axis``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    red = tuple(i for i in range(x.ndim) if i != axis)
    bshape = [1] * x.ndim
    bshape[axis] = c
    count = x.data.size // c
    if training:
        if count < 2:
            raise ShapeError("batchnorm: training needs more than one value per channel")
        mu = x.data.mean(axis=red)
        var = x.data.var(axis=red)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * count / (count - 1)
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def back(g):
        gg = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            gx = (inv.reshape(bshape) / count) * (
                count * gxhat
                - gxhat.sum(axis=red).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=red).reshape(bshape)
            )
        else:
            gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), back)


def masked_softmax(s, mask, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` over entries where ``mask`` is true; others get weight 0."""
    s = as_tensor(s)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
    if not mask.any(axis=axis).all():
        raise ShapeError("masked_softmax: a row has no unmasked entry")
    z = np.where(mask, s.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (s,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))
