"""Neural-network primitives with explicit forward/backward passes.

Everything is plain float64 numpy. Forward functions return the output plus
a cache; backward functions consume the upstream gradient and the cache and
return input/parameter gradients. Batches sit on the first axis.

Complex-valued gradients follow the real-pair convention: the gradient
stored for a complex array ``z`` is ``dL/dRe(z) + 1j * dL/dIm(z)``, so a
complex-linear map ``y = A z`` back-propagates as ``g_z = A^H g_y``.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, TrainingDivergedError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CE_CLAMP = 1e-12


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform initialization on [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(g, cache):
    x, w = cache
    return g @ w.T, x.T @ g, np.sum(g, axis=0)


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(g, mask):
    return g * mask


def batch_norm_forward(x, gamma, beta, eps, mode, running_mean, running_var,
                       momentum=0.1):
    """Feature-wise batch normalization.

    Train mode normalizes with the batch statistics (biased variance) and
    returns updated running statistics; eval mode uses the running
    statistics unchanged. A train-mode batch must contain at least two
    samples, otherwise the variance estimate is meaningless.

    Returns:
        (out, cache, new_running_mean, new_running_var)
    """
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigurationError("batch normalization needs a batch of >= 2 in train mode")
        mean = np.mean(x, axis=0)
        var = np.var(x, axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean) * inv_std
        out = gamma * x_hat + beta
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * var
        return out, (x_hat, inv_std, gamma), new_mean, new_var
    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var + eps)
        x_hat = (x - running_mean) * inv_std
        return gamma * x_hat + beta, (x_hat, inv_std, gamma), running_mean, running_var
    raise ConfigurationError(f"unknown batch-norm mode {mode!r}")


def batch_norm_backward(g, cache):
    """Backward through train-mode batch normalization."""
    x_hat, inv_std, gamma = cache
    nb = g.shape[0]
    g_gamma = np.sum(g * x_hat, axis=0)
    g_beta = np.sum(g, axis=0)
    g_xhat = g * gamma
    g_x = (inv_std / nb) * (
        nb * g_xhat - np.sum(g_xhat, axis=0) - x_hat * np.sum(g_xhat * x_hat, axis=0)
    )
    return g_x, g_gamma, g_beta


def batch_norm_backward_eval(g, cache):
    """Backward through eval-mode batch normalization (fixed statistics)."""
    x_hat, inv_std, gamma = cache
    return g * gamma * inv_std, np.sum(g * x_hat, axis=0), np.sum(g, axis=0)


def softmax_rows(logits):
    """Row-wise softmax over the last axis."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def loss_reconstruction(x, x_hat) -> float:
    """Squared L2 distance between target and reconstruction (any dtype)."""
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ConfigurationError("target and reconstruction shapes differ")
    return float(np.sum(np.abs(x - x_hat) ** 2))


def loss_reconstruction_grad(x, x_hat):
    """Gradient of :func:`loss_reconstruction` with respect to ``x_hat``."""
    return 2.0 * (x_hat - x)


def loss_papr(frames, mode: str = "batch_max") -> float:
    """Peak power over mean power of a transmit signal (linear ratio).

    ``"batch_max"`` treats a (batch, L) array as one long signal: the single
    largest sample power over the overall mean. ``"frame_mean"`` averages
    per-frame ratios instead. Both are >= 1, with equality only for
    constant-envelope signals.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=complex))
    power = np.abs(frames) ** 2
    if mode == "batch_max":
        mean = np.mean(power)
        if mean <= 0:
            raise DegenerateInputError("PAPR loss undefined for an all-zero frame")
        return float(np.max(power) / mean)
    if mode == "frame_mean":
        mean = np.mean(power, axis=1)
        if np.any(mean <= 0):
            raise DegenerateInputError("PAPR loss undefined for an all-zero frame")
        return float(np.mean(np.max(power, axis=1) / mean))
    raise ConfigurationError(f"unknown PAPR loss mode {mode!r}")


def loss_papr_grad(frames, mode: str = "batch_max"):
    """Gradient of :func:`loss_papr` for a (batch, L) complex array.

    The subgradient flows only through the arg-max sample (first index on
    ties) and through the mean-power term.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=complex))
    nb, length = frames.shape
    power = np.abs(frames) ** 2
    if mode == "batch_max":
        mean = np.mean(power)
        flat_idx = np.argmax(power)
        i_star, n_star = np.unravel_index(flat_idx, power.shape)
        peak = power[i_star, n_star]
        grad = -(2.0 * peak / (nb * length * mean**2)) * frames
        grad[i_star, n_star] += 2.0 * frames[i_star, n_star] / mean
        return grad
    if mode == "frame_mean":
        mean = np.mean(power, axis=1)
        peak_idx = np.argmax(power, axis=1)
        peak = power[np.arange(nb), peak_idx]
        grad = -(2.0 * peak / (length * mean**2))[:, None] * frames
        grad[np.arange(nb), peak_idx] += 2.0 * frames[np.arange(nb), peak_idx] / mean
        return grad / nb
    raise ConfigurationError(f"unknown PAPR loss mode {mode!r}")


def total_loss(l1: float, l2: float, eta: float) -> float:
    """Weighted sum of the data loss and the peak-power loss."""
    if eta < 0:
        raise ConfigurationError("eta must be >= 0")
    return l1 + eta * l2


def loss_cross_entropy(probs, labels) -> float:
    """Negative log-likelihood summed over slots.

    ``probs`` has shape (..., Q) with rows summing to one; ``labels`` holds
    the true symbol index per row. Zero probabilities at true labels are
    clamped at 1e-12 and reported with a warning.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    if np.any(picked < CE_CLAMP):
        warnings.warn("cross-entropy saw a (near-)zero probability at a true label")
        picked = np.maximum(picked, CE_CLAMP)
    return float(-np.sum(np.log(picked)))


def softmax_cross_entropy(logits, labels):
    """Fused softmax + cross-entropy.

    Returns (loss, grad_logits, probs); the loss sums over all rows.
    """
    probs = softmax_rows(logits)
    loss = loss_cross_entropy(probs, labels)
    grad = probs.copy()
    np.put_along_axis(
        grad,
        np.asarray(labels, dtype=int)[..., None],
        np.take_along_axis(grad, np.asarray(labels, dtype=int)[..., None], axis=-1) - 1.0,
        axis=-1,
    )
    return loss, grad, probs


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def adam_init(params: dict) -> dict:
    """Fresh optimizer state for a flat name->array parameter dict."""
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(params: dict, grads: dict, state: dict, lr: float) -> dict:
    """One Adam update; mutates ``state``, returns the new parameter dict.

    Raises:
        TrainingDivergedError: if any gradient entry is non-finite.
    """
    state["t"] += 1
    t = state["t"]
    out = {}
    for key, theta in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for {key!r} at step {t}")
        m = state["m"][key] = ADAM_BETA1 * state["m"][key] + (1 - ADAM_BETA1) * g
        v = state["v"][key] = ADAM_BETA2 * state["v"][key] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        out[key] = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return out
