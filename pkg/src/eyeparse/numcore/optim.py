"""Parameter initialisation and plain gradient descent."""

import numpy as np

from ..errors import TrainingError
from .tensor import Tensor


def glorot_uniform(shape, fan_in, fan_out, rng, dtype=np.float32, name=None):
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype),
                  requires_grad=True, name=name, dtype=dtype)


def zeros(shape, dtype=np.float32, name=None):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name, dtype=dtype)


def sgd_step(params, learning_rate):
    """In place ``p <- p - learning_rate * p.grad``.

    All gradients are checked before any parameter moves, so a failure
    leaves the model untouched.
    """
    if learning_rate < 0:
        raise ValueError("learning rate must be non-negative")
    for p in params:
        if p.grad is None:
            continue
        if p.grad.shape != p.shape:
            raise TrainingError(f"gradient shape {p.grad.shape} != parameter {p.shape}", node=p.name)
        if not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"non-finite gradient at {p.name or 'unnamed parameter'}", node=p.name)
    for p in params:
        if p.grad is None or learning_rate == 0:
            continue
        p.data -= np.asarray(learning_rate * p.grad, dtype=p.dtype)
        p.version += 1


def clip_grad_norm(params, max_norm):
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if max_norm is not None and np.isfinite(total) and total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total
