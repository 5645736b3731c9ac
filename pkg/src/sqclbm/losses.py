"""Training losses on predicted post-collision populations and their gradients."""

import numpy as np

from .lattice import VELOCITIES
from .qstate import SLOT_VELOCITIES


def _velocities_for(width):
    if width == 9:
        return VELOCITIES
    if width == 16:
        return SLOT_VELOCITIES
    raise ValueError(f"populations must have 9 or 16 entries, got {width}")


def _as_batch(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 1 else a


def mse_loss(pred, target):
    """Mean squared error over every slot of every sample (16 * B terms)."""
    pred, target = _as_batch(pred), _as_batch(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def momentum_penalty(pred, target):
    """Batch mean of the squared momentum error ``|p - p_hat|^2``.

    Accepts 9-population or 16-slot layouts; surplus slots carry no momentum.
    """
    pred, target = _as_batch(pred), _as_batch(target)
    dp = (pred - target) @ _velocities_for(pred.shape[-1])
    return float(np.mean(np.sum(dp * dp, axis=-1)))


def combined_loss(pred, target, alpha):
    return mse_loss(pred, target) + alpha * momentum_penalty(pred, target)


def combined_loss_grad(pred, target, alpha):
    """``(loss, dloss/dpred)`` for ``mse + alpha * momentum_penalty``, batched."""
    diff = pred - target
    B = diff.shape[0]
    v = _velocities_for(diff.shape[-1])
    dp = diff @ v
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    if alpha:
        loss += alpha * float(np.mean(np.sum(dp * dp, axis=-1)))
        grad += (2.0 * alpha / B) * (dp @ v.T)
    return loss, grad
