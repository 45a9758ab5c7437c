"""Affine layers with a fixed output activation."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NumericError
from . import tape as ops
from .tape import Parameter

ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")


class DenseLayer:
    """``activation(x @ W + b)`` with W of shape (in_dim, out_dim).

    With ``nonnegative=True`` the weight matrix (not the bias) is flagged for
    projection onto the non-negative orthant after every optimizer step.
    """

    def __init__(self, in_dim, out_dim, activation="identity", nonnegative=False, *, rng=None, name="dense",
                 init_scale=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        scale = np.sqrt(2.0 / max(in_dim, 1)) if init_scale is None else init_scale
        if nonnegative:
            w = rng.uniform(0.0, scale, size=(in_dim, out_dim))
        else:
            w = rng.normal(0.0, scale, size=(in_dim, out_dim))
        self.weight = Parameter(w, f"{name}.weight", nonnegative=nonnegative)
        self.bias = Parameter(np.zeros(out_dim), f"{name}.bias")
        self.activation = activation
        self.nonnegative = nonnegative
        self.name = name

    @property
    def in_dim(self):
        return self.weight.value.shape[0]

    @property
    def out_dim(self):
        return self.weight.value.shape[1]

    @property
    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return forward(self, x)


def forward(layer, x):
    x = ops.as_node(x)
    shape = np.shape(x.value)
    if len(shape) != 2 or shape[1] != layer.in_dim:
        raise DimensionError(f"{layer.name}: input shape {shape} does not match weight shape "
                             f"{layer.weight.value.shape}")
    z = ops.add(ops.matmul(x, layer.weight), layer.bias)
    act = layer.activation
    if act == "relu":
        out = ops.relu(z)
    elif act == "sigmoid":
        out = ops.sigmoid(z)
    elif act == "softmax":
        out = ops.softmax(z)
    else:
        out = z
    if not np.all(np.isfinite(out.value)):
        raise NumericError(f"{layer.name}: non-finite output")
    return out
