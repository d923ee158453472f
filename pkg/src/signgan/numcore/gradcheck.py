"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np

from .tensor import backward


def numerical_gradient(f, array, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. ``array`` (perturbed in place)."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        plus = float(f())
        flat[i] = orig - h
        minus = float(f())
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    """Norm-wise relative error ||a - n|| / max(||a||, ||n||); 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(build_loss, tensors, h=1e-5, max_coords=None, rng=None):
    """Compare reverse-mode gradients of ``build_loss()`` against finite differences.

    ``tensors`` are float64 leaves with ``requires_grad``. When ``max_coords`` is
    set, only that many randomly chosen coordinates per tensor are differenced.
    Returns the worst relative error and a per-tensor list.
    """
    loss = build_loss()
    analytic = backward(loss, list(tensors))
    analytic = [a.copy() for a in analytic]
    errors = []
    for t, a in zip(tensors, analytic):
        idx = None
        if max_coords is not None and t.data.size > max_coords:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(t.data.size, size=max_coords, replace=False)
        num = numerical_gradient(lambda: build_loss().data, t.data, h=h, indices=idx)
        if idx is not None:
            errors.append(relative_error(a.reshape(-1)[idx], num.reshape(-1)[idx]))
        else:
            errors.append(relative_error(a, num))
    return max(errors), errors
