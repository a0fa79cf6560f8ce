"""
Dense 4-D tensors and the convolution / rectification kernels.

Tensors are plain numpy arrays shaped (n, c, h, w) in C order. Convolution
is cross-correlation (no filter flip): every output element is the inner
product of a filter with the input window under it, plus the bias.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ...exceptions import DimensionError, NumericalError

logger = logging.getLogger(__name__)

Tensor4 = np.ndarray


def as_tensor4(array, dtype: Optional[np.dtype] = None, name: str = "tensor") -> Tensor4:
    """
    Validate and return a 4-D finite array.

    Args:
        array: Anything np.asarray accepts
        dtype: Optional dtype to cast to
        name: Used in error messages

    Returns:
        The array, C-contiguous
    """
    x = np.ascontiguousarray(array, dtype=dtype)
    if x.ndim != 4:
        raise DimensionError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    check_finite(x, name)
    return x


def check_finite(x: np.ndarray, name: str = "tensor") -> None:
    if not np.isfinite(x).all():
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise NumericalError(f"{name} contains {bad} non-finite value(s)")


def same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape {a.shape} does not match {b.shape}")


@dataclass
class ConvParams:
    """Filters (out_maps, in_maps, kh, kw), bias (out_maps,), stride and zero padding."""

    filters: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.filters.ndim != 4:
            raise DimensionError(f"filters must be 4-D, got shape {self.filters.shape}")
        if self.bias.shape != (self.filters.shape[0],):
            raise DimensionError(
                f"bias length {self.bias.shape} does not match out_maps {self.filters.shape[0]}"
            )
        if self.stride < 1:
            raise DimensionError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise DimensionError(f"padding must be non-negative, got {self.padding}")

    @property
    def out_maps(self) -> int:
        return self.filters.shape[0]

    @property
    def in_maps(self) -> int:
        return self.filters.shape[1]

    @property
    def kernel(self) -> Tuple[int, int]:
        return self.filters.shape[2], self.filters.shape[3]


def conv_output_shape(h: int, w: int, kh: int, kw: int,
                      stride: int = 1, padding: int = 0) -> Tuple[int, int]:
    """Spatial output size of a strided, zero-padded valid convolution."""
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise DimensionError(f"input {h}x{w} (padding {padding}) is smaller than kernel {kh}x{kw}")
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def _check_conv(input: Tensor4, params: ConvParams) -> Tuple[int, int]:
    if input.ndim != 4:
        raise DimensionError(f"input must be 4-D, got shape {input.shape}")
    if input.shape[1] != params.in_maps:
        raise DimensionError(
            f"input has {input.shape[1]} channels but filters expect {params.in_maps}"
        )
    kh, kw = params.kernel
    return conv_output_shape(input.shape[2], input.shape[3], kh, kw, params.stride, params.padding)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(n, c, H, W) -> (n*oh*ow, c*kh*kw) matrix of input windows."""
    n, c = xp.shape[:2]
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def conv2d_forward(input: Tensor4, params: ConvParams) -> Tensor4:
    """
    Valid (optionally zero-padded) strided cross-correlation plus bias.

    Returns:
        Tensor shaped (n, out_maps, oh, ow)
    """
    oh, ow = _check_conv(input, params)
    n = input.shape[0]
    kh, kw = params.kernel
    cols = _im2col(_pad(input, params.padding), kh, kw, params.stride)
    out = cols @ params.filters.reshape(params.out_maps, -1).T + params.bias
    return np.ascontiguousarray(out.reshape(n, oh, ow, params.out_maps).transpose(0, 3, 1, 2))


def conv2d_transpose(grad_output: Tensor4, params: ConvParams,
                     input_hw: Tuple[int, int]) -> Tensor4:
    """
    Adjoint of conv2d_forward with the bias dropped: maps an output-shaped
    tensor back to the (n, in_maps, h, w) input shape.
    """
    h, w = input_hw
    oh, ow = conv_output_shape(h, w, *params.kernel, params.stride, params.padding)
    n = grad_output.shape[0]
    expected = (n, params.out_maps, oh, ow)
    if grad_output.shape != expected:
        raise DimensionError(f"grad_output shape {grad_output.shape} != forward output {expected}")

    kh, kw = params.kernel
    s, p = params.stride, params.padding
    c = params.in_maps
    go = grad_output.transpose(0, 2, 3, 1).reshape(-1, params.out_maps)
    grad_cols = (go @ params.filters.reshape(params.out_maps, -1)).reshape(n, oh, ow, c, kh, kw)
    grad_xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad_cols.dtype)
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, :, i:i + s * oh:s, j:j + s * ow:s] += grad_cols[..., i, j].transpose(0, 3, 1, 2)

    if p:
        grad_xp = grad_xp[:, :, p:-p, p:-p]
    return np.ascontiguousarray(grad_xp)


def conv2d_backward(input: Tensor4, params: ConvParams,
                    grad_output: Tensor4) -> Tuple[Tensor4, np.ndarray, np.ndarray]:
    """
    Gradients of a scalar loss through conv2d_forward.

    Returns:
        (grad_input, grad_filters, grad_bias), shaped like input, filters, bias
    """
    oh, ow = _check_conv(input, params)
    n = input.shape[0]
    expected = (n, params.out_maps, oh, ow)
    if grad_output.shape != expected:
        raise DimensionError(f"grad_output shape {grad_output.shape} != forward output {expected}")

    kh, kw = params.kernel
    cols = _im2col(_pad(input, params.padding), kh, kw, params.stride)
    go = grad_output.transpose(0, 2, 3, 1).reshape(-1, params.out_maps)

    grad_filters = (go.T @ cols).reshape(params.filters.shape)
    grad_bias = go.sum(axis=0)
    grad_input = conv2d_transpose(grad_output, params, input.shape[2:])
    return grad_input, grad_filters, grad_bias


def relu_forward(input: Tensor4) -> Tensor4:
    """Element-wise max(0, x)."""
    return np.maximum(input, 0.0)


def relu_backward(input: Tensor4, grad_output: Tensor4) -> Tensor4:
    """Pass the gradient where input > 0; the subgradient at 0 is 0."""
    same_shape(input, grad_output, "relu_backward")
    return np.where(input > 0, grad_output, 0.0).astype(grad_output.dtype, copy=False)
