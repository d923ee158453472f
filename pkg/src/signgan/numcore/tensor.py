"""Reverse-mode autodiff over numpy arrays.

Every differentiable operation builds a node that remembers its parents, the
function that produced it (so the graph can be replayed) and a closure mapping
the output gradient onto parent gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_call")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._call = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{label})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __sub__(self, other):
        from . import ops
        return ops.add(self, ops.mul(other, -1.0))

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor. Always requires a gradient."""

    __slots__ = ()

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward, call=None):
    """Wrap an op result. ``backward(g)`` returns one gradient (or None) per parent."""
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out._call = call
    return out


@dataclass
class ComputationRecord:
    """Topologically ordered nodes reachable from a scalar output."""

    nodes: list
    output: Tensor

    @classmethod
    def trace(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order, output)

    def parameters(self):
        return [n for n in self.nodes if isinstance(n, Parameter)]

    def replay(self):
        """Re-run every recorded op forward from the leaves; returns the recomputed output."""
        fresh = {}
        for node in self.nodes:
            if node._call is None or not node._parents:
                fresh[id(node)] = node
                continue
            fn, args, kwargs = node._call
            new_args = [_substitute(a, fresh) for a in args]
            fresh[id(node)] = fn(*new_args, **kwargs)
        return fresh[id(self.output)]


def _substitute(arg, fresh):
    if isinstance(arg, Tensor):
        return fresh.get(id(arg), arg)
    if isinstance(arg, (list, tuple)):
        return type(arg)(_substitute(a, fresh) for a in arg)
    return arg


def backward(loss, params=None):
    """Store d(loss)/d(leaf) in ``.grad`` of every reachable leaf (overwriting).

    Returns the gradient list for ``params`` (zeros for parameters the loss does
    not depend on) when ``params`` is given.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    record = ComputationRecord.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(record.nodes):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    reached = {id(n) for n in record.nodes}
    return [p.grad if id(p) in reached else np.zeros_like(p.data) for p in params]


def zero_grad(params):
    for p in params:
        p.grad = None


class frozen:
    """Context manager: treat ``params`` as constants while building a graph."""

    def __init__(self, params):
        self.params = list(params)

    def __enter__(self):
        for p in self.params:
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad = True
        return False
