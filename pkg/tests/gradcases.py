"""Randomized finite-difference cases, one factory per differentiable operation.

Each factory takes a numpy Generator and returns ``(build_loss, leaves)`` in
float64. Non-scalar outputs are reduced with a fixed random weighting so every
output element contributes a distinct gradient.
"""
import numpy as np

from signgan.numcore import ops
from signgan.numcore.optim import elastic_net_penalty
from signgan.numcore.tensor import Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True, dtype=np.float64)


def away_from_zero(rng, shape, gap=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap * 2, x)


def case_conv2d(rng):
    while True:
        n, h, w = rng.integers(1, 3), rng.integers(3, 9), rng.integers(3, 9)
        cin, cout, k = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 4)
        s, p = rng.integers(1, 3), rng.integers(0, 2)
        if (h + 2 * p - k) // s + 1 >= 1 and (w + 2 * p - k) // s + 1 >= 1:
            break
    x, kern = leaf(rng.normal(size=(n, h, w, cin))), leaf(rng.normal(size=(k, k, cin, cout)))
    ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    weights = Tensor(rng.normal(size=(n, ho, wo, cout)), dtype=np.float64)
    return (lambda: ops.tensor_sum(ops.mul(ops.conv2d(x, kern, int(s), int(p)), weights))), [x, kern]


def case_conv_transpose2d(rng):
    while True:
        n, h, w = rng.integers(1, 3), rng.integers(1, 6), rng.integers(1, 6)
        cin, cout, k = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
        s, p = rng.integers(1, 3), rng.integers(0, 2)
        if (h - 1) * s - 2 * p + k >= 1 and (w - 1) * s - 2 * p + k >= 1:
            break
    x, kern = leaf(rng.normal(size=(n, h, w, cin))), leaf(rng.normal(size=(k, k, cout, cin)))
    ho, wo = (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k
    weights = Tensor(rng.normal(size=(n, ho, wo, cout)), dtype=np.float64)
    return (lambda: ops.tensor_sum(ops.mul(ops.conv_transpose2d(x, kern, int(s), int(p)), weights))), [x, kern]


def case_batch_norm_train(rng):
    n, h, w, c = rng.integers(2, 5), rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
    x = leaf(rng.normal(size=(n, h, w, c)) * 2 + 0.5)
    gamma, beta = leaf(rng.normal(size=c)), leaf(rng.normal(size=c))
    rm, rv = np.zeros(c), np.ones(c)
    weights = Tensor(rng.normal(size=(n, h, w, c)), dtype=np.float64)

    def build():
        out, _, _ = ops.batch_norm2d(x, gamma, beta, rm, rv, train=True)
        return ops.tensor_sum(ops.mul(out, weights))

    return build, [x, gamma, beta]


def case_batch_norm_eval(rng):
    n, h, w, c = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
    x = leaf(rng.normal(size=(n, h, w, c)))
    gamma, beta = leaf(rng.normal(size=c)), leaf(rng.normal(size=c))
    rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
    weights = Tensor(rng.normal(size=(n, h, w, c)), dtype=np.float64)

    def build():
        out, _, _ = ops.batch_norm2d(x, gamma, beta, rm, rv, train=False)
        return ops.tensor_sum(ops.mul(out, weights))

    return build, [x, gamma, beta]


def _activation_case(kind):
    def case(rng):
        shape = tuple(rng.integers(1, 5, size=3))
        x = leaf(away_from_zero(rng, shape))
        weights = Tensor(rng.normal(size=shape), dtype=np.float64)
        return (lambda: ops.tensor_sum(ops.mul(ops.activation(x, kind, 0.2), weights))), [x]
    case.__name__ = f"case_{kind}"
    return case


def case_dense(rng):
    n, f, g = rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 9)
    x, w, b = leaf(rng.normal(size=(n, f))), leaf(rng.normal(size=(f, g))), leaf(rng.normal(size=g))
    weights = Tensor(rng.normal(size=(n, g)), dtype=np.float64)
    return (lambda: ops.tensor_sum(ops.mul(ops.dense(x, w, b), weights))), [x, w, b]


def case_softmax_cross_entropy(rng):
    n, c = rng.integers(1, 6), rng.integers(2, 11)
    logits = leaf(rng.normal(size=(n, c)) * 3)
    labels = rng.integers(0, c, size=n)
    return (lambda: ops.softmax_cross_entropy(logits, labels)), [logits]


def case_binary_cross_entropy(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    p = leaf(rng.uniform(0.05, 0.95, size=shape))
    t = rng.integers(0, 2, size=shape).astype(np.float64)
    return (lambda: ops.binary_cross_entropy(p, t)), [p]


def case_bce_with_logits(rng):
    shape = tuple(rng.integers(1, 5, size=2))
    z = leaf(rng.normal(size=shape) * 4)
    t = rng.integers(0, 2, size=shape).astype(np.float64)
    return (lambda: ops.binary_cross_entropy_with_logits(z, t)), [z]


def case_elastic_net(rng):
    ws = [leaf(away_from_zero(rng, tuple(rng.integers(1, 5, size=2)), gap=0.05)) for _ in range(2)]
    l1, l2 = rng.uniform(0, 2), rng.uniform(0, 2)
    return (lambda: elastic_net_penalty(ws, l1, l2)), ws


def case_max_pool2d(rng):
    n, c = rng.integers(1, 3), rng.integers(1, 5)
    h, w = 2 * rng.integers(1, 5), 2 * rng.integers(1, 5)
    # well-separated distinct values: no ties within the finite-difference step
    vals = rng.permutation(n * h * w * c).astype(np.float64) * 0.01
    x = leaf(vals.reshape(n, h, w, c))
    weights = Tensor(rng.normal(size=(n, h // 2, w // 2, c)), dtype=np.float64)
    return (lambda: ops.tensor_sum(ops.mul(ops.max_pool2d(x, 2), weights))), [x]


def case_channel_bias_concat(rng):
    n, h, w, c = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    x, b = leaf(rng.normal(size=(n, h, w, c))), leaf(rng.normal(size=c))
    y = leaf(rng.normal(size=(n, 3)))
    weights = Tensor(rng.normal(size=(n, h * w * c + 3)), dtype=np.float64)

    def build():
        feats = ops.concat([ops.flatten(ops.add_channel_bias(x, b)), y], axis=1)
        return ops.tensor_sum(ops.mul(feats, weights))

    return build, [x, b, y]


CASES = {
    "conv2d": case_conv2d,
    "conv_transpose2d": case_conv_transpose2d,
    "batch_norm2d_train": case_batch_norm_train,
    "batch_norm2d_eval": case_batch_norm_eval,
    "relu": _activation_case("relu"),
    "leaky_relu": _activation_case("leaky_relu"),
    "tanh": _activation_case("tanh"),
    "sigmoid": _activation_case("sigmoid"),
    "dense": case_dense,
    "softmax_cross_entropy": case_softmax_cross_entropy,
    "binary_cross_entropy": case_binary_cross_entropy,
    "bce_with_logits": case_bce_with_logits,
    "elastic_net": case_elastic_net,
    "max_pool2d": case_max_pool2d,
    "bias_concat_flatten": case_channel_bias_concat,
}
