"""Adam optimizer and the elastic-net weight penalty."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError
from . import ops


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("adam_step needs one gradient and one moment pair per parameter",
                         params=len(params), grads=len(grads), moments=len(state.first_moment))
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError("gradient shape differs from parameter shape",
                             name=p.name, param=p.data.shape, grad=g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.data -= step.astype(p.data.dtype)
    return state


def elastic_net_penalty(params, lambda1, lambda2):
    """lambda1 * sum|w| + lambda2 * sum w^2 over all params, as a differentiable scalar.

    Its gradient is lambda1 * sign(w) + 2 * lambda2 * w with sign(0) = 0.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise NumericError(f"elastic-net weights must be non-negative, got "
                           f"lambda1={lambda1}, lambda2={lambda2}")
    total = None
    for p in params:
        term = None
        if lambda1:
            term = ops.mul(ops.tensor_sum(ops.tensor_abs(p)), float(lambda1))
        if lambda2:
            sq = ops.mul(ops.tensor_sum(ops.square(p)), float(lambda2))
            term = sq if term is None else ops.add(term, sq)
        if term is not None:
            total = term if total is None else ops.add(total, term)
    if total is None:
        dtype = params[0].dtype if params else np.float32
        return ops.Tensor(np.zeros((), dtype=dtype))
    return total
