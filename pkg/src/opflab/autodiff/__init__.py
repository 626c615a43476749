"""Small reverse-mode autodiff engine for dense float64 networks."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    BatchNorm,
    Block,
    ChebConv,
    Conv2d,
    Dense,
    GATConv,
    GCNConv,
    GraphConv,
    cheb_layer,
    edge_mask,
    gat_layer,
    gcn_layer,
    graphconv_layer,
)
from .losses import bce, mse
from .optim import AdamState, NonFiniteGradient, adam_step
from .tensor import (
    BatchNormState,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    batchnorm,
    concat,
    conv2d,
    flatten,
    leaky_relu,
    masked_softmax,
    matmul,
    maxpool1d,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sub,
    take,
    transpose,
    tsum,
)

__all__ = [
    "AdamState",
    "BatchNorm",
    "BatchNormState",
    "Block",
    "ChebConv",
    "CheckpointError",
    "Conv2d",
    "Dense",
    "GATConv",
    "GCNConv",
    "GraphConv",
    "NonFiniteGradient",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "batchnorm",
    "bce",
    "cheb_layer",
    "concat",
    "conv2d",
    "edge_mask",
    "flatten",
    "gat_layer",
    "gcn_layer",
    "graphconv_layer",
    "leaky_relu",
    "load_checkpoint",
    "masked_softmax",
    "matmul",
    "maxpool1d",
    "mean",
    "mse",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "sub",
    "take",
    "transpose",
    "tsum",
]
