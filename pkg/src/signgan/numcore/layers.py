"""Layer objects with named parameters.

Layers expose a ``kind`` string so a network can be audited structurally, and a
``state()`` mapping (parameters plus buffers) for checkpointing.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter

INIT_STD = 0.02


class Layer:
    kind = "layer"

    def __init__(self, name):
        self.name = name

    def params(self):
        return []

    def buffers(self):
        return {}

    def forward(self, x, train):
        raise NotImplementedError

    def __call__(self, x, train=True):
        return self.forward(x, train)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, n_in, n_out, rng, dtype=np.float32, bias=True):
        super().__init__(name)
        self.weight = Parameter(rng.normal(0.0, INIT_STD, (n_in, n_out)).astype(dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype), f"{name}.bias") if bias else None

    def params(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train):
        return ops.dense(x, self.weight, self.bias)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, name, c_in, c_out, size, stride, padding, rng, dtype=np.float32, bias=True):
        super().__init__(name)
        self.stride, self.padding = stride, padding
        self.kernel = Parameter(rng.normal(0.0, INIT_STD, (size, size, c_in, c_out)).astype(dtype),
                                f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out, dtype), f"{name}.bias") if bias else None

    def params(self):
        return [self.kernel] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train):
        out = ops.conv2d(x, self.kernel, self.stride, self.padding)
        if self.bias is not None:
            out = ops.add_channel_bias(out, self.bias)
        return out


class ConvTranspose2d(Layer):
    kind = "conv_transpose2d"

    def __init__(self, name, c_in, c_out, size, stride, padding, rng, dtype=np.float32, bias=True):
        super().__init__(name)
        self.stride, self.padding = stride, padding
        # stored in the layout of the conv2d being transposed: (Kh, Kw, Cout, Cin)
        self.kernel = Parameter(rng.normal(0.0, INIT_STD, (size, size, c_out, c_in)).astype(dtype),
                                f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out, dtype), f"{name}.bias") if bias else None

    def params(self):
        return [self.kernel] + ([self.bias] if self.bias is not None else [])

    def forward(self, x, train):
        out = ops.conv_transpose2d(x, self.kernel, self.stride, self.padding)
        if self.bias is not None:
            out = ops.add_channel_bias(out, self.bias)
        return out


class BatchNorm2d(Layer):
    kind = "batch_norm"

    def __init__(self, name, channels, dtype=np.float32, momentum=0.9, eps=1e-5):
        super().__init__(name)
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def load_buffers(self, values):
        self.running_mean = np.array(values[f"{self.name}.running_mean"])
        self.running_var = np.array(values[f"{self.name}.running_var"])

    def forward(self, x, train):
        out, self.running_mean, self.running_var = ops.batch_norm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            train=train, momentum=self.momentum, eps=self.eps)
        return out


class Activation(Layer):
    kind = "activation"

    def __init__(self, name, fn, alpha=0.2):
        super().__init__(name)
        self.fn, self.alpha = fn, alpha

    def forward(self, x, train):
        return ops.activation(x, self.fn, self.alpha)

    def __repr__(self):
        return f"Activation({self.name!r}, {self.fn!r})"


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, name, shape):
        super().__init__(name)
        self.shape = tuple(shape)

    def forward(self, x, train):
        return ops.reshape(x, (x.shape[0],) + self.shape)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train):
        return ops.flatten(x)


class MaxPool2d(Layer):
    kind = "max_pool2d"

    def __init__(self, name, size=2):
        super().__init__(name)
        self.size = size

    def forward(self, x, train):
        return ops.max_pool2d(x, self.size)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def forward(self, x, train=True, upto=None):
        for layer in self.layers[:upto]:
            x = layer(x, train)
        return x

    __call__ = forward

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out


def state_of(layers):
    """Name -> array snapshot of all parameters and buffers (copied)."""
    state = {}
    for layer in layers:
        for p in layer.params():
            state[p.name] = p.data.copy()
        for k, v in layer.buffers().items():
            state[k] = v.copy()
    return state


def load_state(layers, state):
    for layer in layers:
        for p in layer.params():
            if state[p.name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {p.name}: "
                                 f"{state[p.name].shape} vs {p.data.shape}")
            p.data = np.array(state[p.name], dtype=p.data.dtype)
        if isinstance(layer, BatchNorm2d):
            layer.load_buffers(state)
