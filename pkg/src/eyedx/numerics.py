"""Dense-array math for the mini transformer: forwards and hand-derived backwards.

Everything operates on plain numpy arrays and preserves the input dtype, so
the same code runs in float32 for training and float64 for gradient checks.
Backward functions return gradients of a scalar loss given upstream grads;
there is no tape, callers wire the chain rule by hand in model.py.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing broadcast expansion."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise NumericError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(a: np.ndarray, b: np.ndarray, dc: np.ndarray):
    """Gradients of c = a @ b. Handles the broadcast case of a stacked `a`
    against a shared 2D `b` (the projection-weight pattern)."""
    da = _reduce_to(dc @ np.swapaxes(b, -1, -2), a.shape)
    db = _reduce_to(np.swapaxes(a, -1, -2) @ dc, b.shape)
    return da, db


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray, axis: int = -1) -> np.ndarray:
    """Backward through softmax given its forward output y."""
    return y * (dy - (dy * y).sum(axis=axis, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """Mean of -log p(target) over positions where mask is true.

    logits: (..., V); targets/mask: logits.shape[:-1]. Prompt and padding
    positions carry mask=False and contribute nothing, to the loss or to
    its gradient.
    """
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise NumericError(
            f"cross_entropy shape mismatch: logits {logits.shape}, "
            f"targets {targets.shape}, mask {mask.shape}"
        )
    n = int(mask.sum())
    if n == 0:
        raise NumericError("cross_entropy: mask selects no positions")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    target_logit = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    nll = logz - target_logit
    return float((nll * mask).sum() / n)


def cross_entropy_backward(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """d loss / d logits: (softmax - onehot) / n on unmasked rows, zero elsewhere."""
    n = int(mask.sum())
    if n == 0:
        raise NumericError("cross_entropy: mask selects no positions")
    probs = softmax(logits, axis=-1)
    np.put_along_axis(
        probs, targets[..., None], np.take_along_axis(probs, targets[..., None], axis=-1) - 1.0, axis=-1
    )
    return probs * (mask[..., None] / n)


def silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def silu_backward(z: np.ndarray, dy: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return dy * s * (1.0 + z * (1.0 - s))


def finite_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise.

    The oracle for every hand-derived backward in this package. Runs in the
    dtype of x; call with float64 for trustworthy digits.
    """
    x = np.asarray(x)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        f_plus = f(x)
        flat_x[i] = orig - h
        f_minus = f(x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def grad_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-based relative error between two gradients of the same shape."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)
