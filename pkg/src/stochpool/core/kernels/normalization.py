"""
Cross-map response normalization, the dense classifier and softmax
cross-entropy.
"""

from typing import Tuple

import numpy as np

from ...exceptions import ContractViolationError, DimensionError
from .tensor import Tensor4, same_shape


def _channel_window_sum(x: np.ndarray, size: int) -> np.ndarray:
    """Sum over channels c-size//2 .. c+size//2, clamped at the edges."""
    half = size // 2
    channels = x.shape[1]
    total = np.zeros_like(x)
    for offset in range(-half, half + 1):
        lo, hi = max(0, -offset), min(channels, channels - offset)
        if lo < hi:
            total[:, lo:hi] += x[:, lo + offset:hi + offset]
    return total


def _check_lrn(size: int, k: float) -> None:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"response normalization size must be odd and positive, got {size}")
    if k <= 0:
        raise ValueError(f"response normalization k must be positive, got {k}")


def lrn_forward(input: Tensor4, size: int = 5, alpha: float = 1e-4,
                beta: float = 0.75, k: float = 1.0) -> Tensor4:
    """out[c] = in[c] / (k + alpha * sum_{c' near c} in[c']^2) ** beta"""
    _check_lrn(size, k)
    denom = k + alpha * _channel_window_sum(np.square(input), size)
    return input * denom ** -beta


def lrn_backward(input: Tensor4, grad_output: Tensor4, size: int = 5, alpha: float = 1e-4,
                 beta: float = 0.75, k: float = 1.0) -> Tensor4:
    _check_lrn(size, k)
    same_shape(input, grad_output, "lrn_backward")
    denom = k + alpha * _channel_window_sum(np.square(input), size)
    scale = denom ** -beta
    # the clamped window is symmetric, so the adjoint reuses the same sum
    cross = _channel_window_sum(grad_output * input * scale / denom, size)
    return grad_output * scale - 2.0 * alpha * beta * input * cross


def dense_forward(features: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """(batch, inputs) @ (classes, inputs).T + bias"""
    if features.ndim != 2 or features.shape[1] != weights.shape[1]:
        raise DimensionError(
            f"dense layer expects (batch, {weights.shape[1]}) features, got {features.shape}"
        )
    return features @ weights.T + bias


def dense_backward(features: np.ndarray, weights: np.ndarray,
                   grad_logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_logits.shape != (features.shape[0], weights.shape[0]):
        raise DimensionError(
            f"grad_logits shape {grad_logits.shape} != {(features.shape[0], weights.shape[0])}"
        )
    return grad_logits @ weights, grad_logits.T @ features, grad_logits.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy of a max-shifted softmax.

    Returns:
        (loss, grad_logits) with grad = (softmax - onehot) / batch
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels shape {labels.shape} != ({batch},)")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractViolationError(f"labels must lie in [0, {classes})")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - shifted[rows, labels]))

    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / batch
