from .tensor import Tensor, Parameter, ComputationRecord, backward, frozen, zero_grad
from .ops import (
    activation, add, add_channel_bias, batch_norm2d, binary_cross_entropy,
    binary_cross_entropy_with_logits, concat, conv2d, conv_transpose2d, dense,
    flatten, leaky_relu, matmul, max_pool2d, relu, reshape, sigmoid, softmax,
    softmax_cross_entropy, tanh,
)
from .optim import AdamState, adam_step, elastic_net_penalty
from .gradcheck import check_gradients, numerical_gradient, relative_error

__all__ = [
    "Tensor", "Parameter", "ComputationRecord", "backward", "frozen", "zero_grad",
    "activation", "add", "add_channel_bias", "batch_norm2d", "binary_cross_entropy",
    "binary_cross_entropy_with_logits", "concat", "conv2d", "conv_transpose2d", "dense",
    "flatten", "leaky_relu", "matmul", "max_pool2d", "relu", "reshape", "sigmoid",
    "softmax", "softmax_cross_entropy", "tanh",
    "AdamState", "adam_step", "elastic_net_penalty",
    "check_gradients", "numerical_gradient", "relative_error",
]
