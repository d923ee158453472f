"""Differentiable operations. Image tensors are NHWC; conv kernels are (Kh, Kw, Cin, Cout).

Each op works in the dtype of its first tensor argument, so building a graph
from float64 leaves gives a float64 graph for gradient checking.
"""
from __future__ import annotations

import functools

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor, as_tensor, make_node

BCE_CLAMP = 1e-7


def _recorded(fn):
    """Attach (fn, args, kwargs) to the output so a ComputationRecord can replay it."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        if isinstance(out, Tensor):
            out._call = (wrapper, args, kwargs)
        return out

    return wrapper


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _like(x, ref):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=ref.dtype), dtype=ref.dtype)


# ---------------------------------------------------------------- elementwise

@_recorded
def add(a, b):
    a = as_tensor(a)
    b = _like(b, a)
    out = a.data + b.data

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return make_node(out, (a, b), bw)


@_recorded
def mul(a, b):
    a = as_tensor(a)
    b = _like(b, a)
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return make_node(out, (a, b), bw)


@_recorded
def tensor_sum(x):
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_node(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


@_recorded
def tensor_abs(x):
    out = np.abs(x.data)
    return make_node(out, (x,), lambda g: (g * np.sign(x.data),))


@_recorded
def square(x):
    out = x.data * x.data
    return make_node(out, (x,), lambda g: (2 * g * x.data,))


@_recorded
def reshape(x, shape):
    out = x.data.reshape(shape)
    return make_node(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x):
    return reshape(x, (x.shape[0], -1))


@_recorded
def concat(tensors, axis=-1):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(tensors), bw)


# ---------------------------------------------------------------- activations

@_recorded
def relu(x):
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype)
    return make_node(out, (x,), lambda g: (g * mask,))


@_recorded
def leaky_relu(x, alpha=0.2):
    if not 0 < alpha < 1:
        raise NumericError(f"leaky_relu alpha must lie in (0, 1), got {alpha}")
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)
    out = x.data * slope
    return make_node(out, (x,), lambda g: (g * slope,))


@_recorded
def tanh(x):
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1 - out * out),))


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1 + e)
    return out


@_recorded
def sigmoid(x):
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1 - out),))


def activation(x, kind, alpha=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise NumericError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- dense

@_recorded
def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions disagree", lhs=a.shape, rhs=b.shape)
    out = a.data @ b.data

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return make_node(out, (a, b), bw)


def dense(x, weights, bias=None):
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError("dense input features do not match weight rows",
                         input_features=x.shape[-1], weight_rows=weights.shape[0])
    out = matmul(x, weights)
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ShapeError("dense bias length mismatch", bias=bias.shape, outputs=weights.shape[1])
        out = add(out, bias)
    return out


# ---------------------------------------------------------------- convolution

def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def _unpad(x, p):
    if p == 0:
        return x
    return x[:, p:-p, p:-p, :]


def im2col(xp, kh, kw, stride, ho, wo):
    """(N, Hp, Wp, C) padded input -> (N*Ho*Wo, Kh*Kw*C) patch matrix."""
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * (ho - 1) + 1:stride,
                                        j:j + stride * (wo - 1) + 1:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def col2im(cols, padded_shape, kh, kw, stride, ho, wo):
    """Adjoint of im2col: scatter-add patches back into a padded image."""
    n, _, _, c = padded_shape
    cols = cols.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride, :] += cols[:, :, :, i, j, :]
    return out


def _check_conv_args(stride, padding):
    if int(stride) != stride or stride < 1:
        raise ShapeError("stride must be a positive integer", stride=stride)
    if int(padding) != padding or padding < 0:
        raise ShapeError("padding must be a non-negative integer", padding=padding)


def conv2d_output_size(h, k, stride, padding):
    return (h + 2 * padding - k) // stride + 1


def conv_transpose2d_output_size(h, k, stride, padding):
    return (h - 1) * stride - 2 * padding + k


@_recorded
def conv2d(x, kernels, stride=1, padding=0):
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv2d expects NHWC input and KhKwCinCout kernels",
                         input_ndim=x.data.ndim, kernel_ndim=kernels.data.ndim)
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if cin != kcin:
        raise ShapeError("conv2d channel mismatch", input_channels=cin, kernel_cin=kcin)
    ho = conv2d_output_size(h, kh, stride, padding)
    wo = conv2d_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d output would be empty", height=h, width=w,
                         kernel_h=kh, kernel_w=kw, padding=padding)
    xp = _pad(x.data, padding)
    cols = im2col(xp, kh, kw, stride, ho, wo)
    kmat = kernels.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(n, ho, wo, cout)

    def bw(g):
        g2 = g.reshape(-1, cout)
        dx = dk = None
        if x.requires_grad:
            dx = _unpad(col2im(g2 @ kmat.T, xp.shape, kh, kw, stride, ho, wo), padding)
        if kernels.requires_grad:
            dk = (cols.T @ g2).reshape(kernels.shape)
        return dx, dk

    return make_node(out, (x, kernels), bw)


@_recorded
def conv_transpose2d(x, kernels, stride=1, padding=0):
    """Fractional-strided convolution, the exact adjoint of :func:`conv2d`.

    ``kernels`` uses the layout of the conv2d it transposes: (Kh, Kw, Cout, Cin)
    where Cin = channels of ``x`` and Cout = channels of the result.
    """
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError("conv_transpose2d expects NHWC input and 4-d kernels",
                         input_ndim=x.data.ndim, kernel_ndim=kernels.data.ndim)
    n, h, w, cin = x.shape
    kh, kw, cout, kcin = kernels.shape
    if cin != kcin:
        raise ShapeError("conv_transpose2d channel mismatch", input_channels=cin, kernel_cin=kcin)
    ho = conv_transpose2d_output_size(h, kh, stride, padding)
    wo = conv_transpose2d_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv_transpose2d output would be empty", height=h, width=w,
                         kernel_h=kh, kernel_w=kw, padding=padding)
    kmat = kernels.data.reshape(kh * kw * cout, cin)
    xmat = x.data.reshape(-1, cin)
    padded_shape = (n, ho + 2 * padding, wo + 2 * padding, cout)
    out = _unpad(col2im(xmat @ kmat.T, padded_shape, kh, kw, stride, h, w), padding)
    out = np.ascontiguousarray(out)

    def bw(g):
        gcols = im2col(_pad(g, padding), kh, kw, stride, h, w)
        dx = (gcols @ kmat).reshape(x.shape) if x.requires_grad else None
        dk = (gcols.T @ xmat).reshape(kernels.shape) if kernels.requires_grad else None
        return dx, dk

    return make_node(out, (x, kernels), bw)


@_recorded
def add_channel_bias(x, bias):
    """Broadcast-add a per-channel bias over the last axis."""
    if bias.shape != (x.shape[-1],):
        raise ShapeError("bias length must equal channel count", bias=bias.shape, channels=x.shape[-1])
    out = x.data + bias.data
    axes = tuple(range(x.data.ndim - 1))

    def bw(g):
        return (g if x.requires_grad else None,
                g.sum(axis=axes) if bias.requires_grad else None)

    return make_node(out, (x, bias), bw)


@_recorded
def max_pool2d(x, size=2):
    n, h, w, c = x.shape
    if h % size or w % size:
        raise ShapeError("max_pool2d needs spatial dims divisible by the window",
                         height=h, width=w, window=size)
    ho, wo = h // size, w // size
    win = (x.data.reshape(n, ho, size, wo, size, c)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, ho, wo, c, size * size))
    # first maximum wins on ties so the gradient is routed to one element
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        dx = (gw.reshape(n, ho, wo, c, size, size)
              .transpose(0, 1, 4, 2, 5, 3)
              .reshape(n, h, w, c))
        return (dx,)

    return make_node(out, (x,), bw)


# ---------------------------------------------------------------- batch norm

def batch_norm2d(x, gamma, beta, running_mean, running_var, train=True,
                 momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over every axis but the last.

    Returns ``(out, new_running_mean, new_running_var)``; running statistics
    follow ``r <- momentum * r + (1 - momentum) * batch_stat`` in train mode and
    pass through unchanged in eval mode.
    """
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm2d affine parameters must be per-channel",
                         channels=c, gamma=gamma.shape, beta=beta.shape)
    if not train:
        out = _bn_eval(x, gamma, beta, running_mean, running_var, eps)
        return out, running_mean, running_var
    if x.shape[0] < 2:
        raise NumericError("batch_norm2d in train mode needs a batch of at least 2")
    out = _bn_train(x, gamma, beta, eps)
    axes = tuple(range(x.data.ndim - 1))
    count = x.data.size // c
    mean = x.data.mean(axis=axes)
    var = x.data.var(axis=axes) * (count / max(count - 1, 1))
    new_mean = (momentum * running_mean + (1 - momentum) * mean).astype(running_mean.dtype)
    new_var = (momentum * running_var + (1 - momentum) * var).astype(running_var.dtype)
    return out, new_mean, new_var


@_recorded
def _bn_train(x, gamma, beta, eps):
    axes = tuple(range(x.data.ndim - 1))
    count = x.data.size // x.shape[-1]
    mean = x.data.mean(axis=axes)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axes)
    inv_std = 1 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        dbeta = g.sum(axis=axes) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes)
                                      - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return make_node(out.astype(x.dtype), (x, gamma, beta), bw)


@_recorded
def _bn_eval(x, gamma, beta, running_mean, running_var, eps):
    axes = tuple(range(x.data.ndim - 1))
    inv_std = (1 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = (x.data - running_mean.astype(x.dtype)) * inv_std
    out = xhat * gamma.data + beta.data

    def bw(g):
        return (g * gamma.data * inv_std if x.requires_grad else None,
                (g * xhat).sum(axis=axes) if gamma.requires_grad else None,
                g.sum(axis=axes) if beta.requires_grad else None)

    return make_node(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- losses

def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


@_recorded
def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError("one label per row required", rows=n, labels=labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise NumericError(f"labels must lie in [0, {c}), got range "
                           f"[{labels.min()}, {labels.max()}]")
    logp = log_softmax(logits.data)
    loss = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def bw(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1
        return (d * (g / n),)

    return make_node(loss, (logits,), bw)


@_recorded
def binary_cross_entropy(probs, targets):
    """Mean BCE on probabilities, clamped BCE_CLAMP away from 0 and 1."""
    t = np.asarray(targets, dtype=probs.dtype)
    if t.shape != probs.shape:
        t = np.broadcast_to(t, probs.shape)
    p = probs.data
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    n = p.size
    loss = np.asarray(-(t * np.log(pc) + (1 - t) * np.log1p(-pc)).mean(), dtype=probs.dtype)
    inside = (p >= BCE_CLAMP) & (p <= 1 - BCE_CLAMP)

    def bw(g):
        return (np.where(inside, (pc - t) / (pc * (1 - pc)), 0).astype(probs.dtype) * (g / n),)

    return make_node(loss, (probs,), bw)


@_recorded
def binary_cross_entropy_with_logits(logits, targets):
    """BCE(sigmoid(logits), targets) evaluated without forming the probability.

    Same value as the composed form wherever the clamp is inactive, but the
    gradient never vanishes through a saturated sigmoid.
    """
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    if t.shape != z.shape:
        t = np.broadcast_to(t, z.shape)
    n = z.size
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    loss = np.asarray(loss.mean(), dtype=z.dtype)

    def bw(g):
        return ((_sigmoid(z) - t) * (g / n),)

    return make_node(loss, (logits,), bw)
