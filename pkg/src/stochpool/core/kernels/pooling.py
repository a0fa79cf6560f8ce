"""
Pooling regions, the four pooling functions and their backward passes.

Regions are computed once per geometry as an index matrix of shape
(regions, window_area). Each row lists flat plane indices (row * w + col)
in row-major order; rows of border regions that were truncated are padded
with the sink index h * w, which gathers a fill value and scatters into a
discarded column.

Random draws for stochastic pooling are taken as one uniform per region,
in batch-major, then channel, then region row-major order, so a given
generator state fully determines the sampled switches.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np

from ...exceptions import ConsistencyError, ContractViolationError, DimensionError
from ...models.pooling_modes import PoolingKind, PoolingMode
from .tensor import Tensor4, same_shape

logger = logging.getLogger(__name__)

NONE = -1


def _axis_windows(dim: int, k: int, s: int) -> List[Tuple[int, int]]:
    if k < 1 or s < 1:
        raise DimensionError(f"window and stride must be positive, got window {k}, stride {s}")
    if dim < k:
        raise DimensionError(f"window {k} is larger than input dimension {dim}")
    count = (dim - k) // s + 1
    if (count - 1) * s + k < dim:
        count += 1
    return [(i * s, min(i * s + k, dim)) for i in range(count)]


@dataclass(frozen=True)
class PoolingGeometry:
    """Window (kh, kw), stride and the (h, w) of the planes being pooled."""

    window: Tuple[int, int]
    stride: int
    input_shape: Tuple[int, int]

    @cached_property
    def row_windows(self) -> List[Tuple[int, int]]:
        return _axis_windows(self.input_shape[0], self.window[0], self.stride)

    @cached_property
    def col_windows(self) -> List[Tuple[int, int]]:
        return _axis_windows(self.input_shape[1], self.window[1], self.stride)

    @property
    def output_shape(self) -> Tuple[int, int]:
        return len(self.row_windows), len(self.col_windows)

    @property
    def region_count(self) -> int:
        oh, ow = self.output_shape
        return oh * ow

    @property
    def plane_size(self) -> int:
        return self.input_shape[0] * self.input_shape[1]

    @cached_property
    def region_index(self) -> np.ndarray:
        """(regions, kh*kw) flat plane indices, sink-padded."""
        w = self.input_shape[1]
        sink = self.plane_size
        index = np.full((self.region_count, self.window[0] * self.window[1]), sink, dtype=np.int64)
        r = 0
        for r0, r1 in self.row_windows:
            for c0, c1 in self.col_windows:
                cells = [row * w + col for row in range(r0, r1) for col in range(c0, c1)]
                index[r, :len(cells)] = cells
                r += 1
        index.setflags(write=False)
        return index

    @cached_property
    def region_sizes(self) -> np.ndarray:
        sizes = np.count_nonzero(self.region_index != self.plane_size, axis=1)
        sizes.setflags(write=False)
        return sizes

    @cached_property
    def region_bounds(self) -> np.ndarray:
        """(regions, 4) array of [row0, row1, col0, col1) per region."""
        bounds = [(r0, r1, c0, c1) for r0, r1 in self.row_windows for c0, c1 in self.col_windows]
        return np.array(bounds, dtype=np.int64)


def enumerate_regions(geometry: PoolingGeometry) -> List[np.ndarray]:
    """Flat input indices covered by each output cell, output row-major."""
    sink = geometry.plane_size
    return [row[row != sink].copy() for row in geometry.region_index]


@dataclass
class SwitchMap:
    """
    Per output cell, the flat plane index the region selected, or NONE (-1)
    when every activation in the region was exactly zero.
    """

    indices: np.ndarray
    geometry: PoolingGeometry

    def validate(self) -> "SwitchMap":
        """Raise ConsistencyError unless every recorded index lies inside its region."""
        oh, ow = self.geometry.output_shape
        if self.indices.ndim != 4 or self.indices.shape[2:] != (oh, ow):
            raise ConsistencyError(
                f"switch map shape {self.indices.shape} does not match output grid {(oh, ow)}"
            )
        flat = self.indices.reshape(self.indices.shape[0], self.indices.shape[1], -1)
        w = self.geometry.input_shape[1]
        bounds = self.geometry.region_bounds
        live = ~self.none_mask.reshape(flat.shape)
        rows, cols = flat // w, flat % w
        inside = ((rows >= bounds[:, 0]) & (rows < bounds[:, 1])
                  & (cols >= bounds[:, 2]) & (cols < bounds[:, 3]))
        if np.any(live & ~inside) or np.any(flat < NONE):
            raise ConsistencyError("switch index outside its pooling region")
        return self

    @property
    def none_mask(self) -> np.ndarray:
        return self.indices == NONE


@dataclass
class RegionDistribution:
    """Multinomial over the elements of one region."""

    probabilities: np.ndarray
    degenerate: bool


def region_probabilities(region_activations) -> RegionDistribution:
    """
    Normalize a region's rectified activations into p_i = a_i / sum(a).

    A region summing to zero is flagged degenerate and gets all-zero
    probabilities.
    """
    a = np.asarray(region_activations, dtype=np.float64).ravel()
    if np.any(a < 0):
        raise ContractViolationError("region activations must be non-negative")
    total = a.sum()
    if total == 0:
        return RegionDistribution(np.zeros_like(a), True)
    return RegionDistribution(a / total, False)


def model_count(region_size: int, region_count: int) -> Tuple[Optional[int], float]:
    """
    Number of distinct networks n^d selectable by stochastic pooling.

    Returns:
        (exact, log10). exact is None when n^d has more than 300 digits.
    """
    if region_size < 1 or region_count < 0:
        raise ValueError(f"need n >= 1 and d >= 0, got n={region_size}, d={region_count}")
    log10 = region_count * math.log10(region_size)
    exact = region_size ** region_count if log10 <= 300 else None
    return exact, log10


def _check_input(input: Tensor4, geometry: PoolingGeometry) -> None:
    if input.ndim != 4:
        raise DimensionError(f"pooling input must be 4-D, got shape {input.shape}")
    if tuple(input.shape[2:]) != tuple(geometry.input_shape):
        raise DimensionError(
            f"input planes {input.shape[2:]} do not match geometry {geometry.input_shape}"
        )


def _check_rectified(input: Tensor4) -> None:
    if np.any(input < 0):
        raise ContractViolationError(
            "stochastic and probability-weighted pooling require non-negative (rectified) input"
        )


def _gather(input: Tensor4, geometry: PoolingGeometry, fill: float = 0.0) -> np.ndarray:
    """(n, c, h, w) -> (n, c, regions, kh*kw), sink slots set to fill."""
    n, c = input.shape[:2]
    planes = input.reshape(n, c, geometry.plane_size)
    padded = np.concatenate([planes, np.full((n, c, 1), fill, dtype=input.dtype)], axis=2)
    return padded[:, :, geometry.region_index]


def _scatter(values: np.ndarray, targets: np.ndarray, n: int, c: int,
             geometry: PoolingGeometry) -> np.ndarray:
    """Accumulate values (n, c, m) at plane indices targets (n, c, m); sink dropped."""
    width = geometry.plane_size + 1
    planes = np.arange(n * c, dtype=np.int64).reshape(n, c, 1) * width
    linear = (targets.reshape(n, c, -1) + planes).ravel()
    summed = np.bincount(linear, weights=values.reshape(-1).astype(np.float64, copy=False),
                         minlength=n * c * width)
    out = summed.reshape(n, c, width)[:, :, :geometry.plane_size]
    h, w = geometry.input_shape
    return out.reshape(n, c, h, w).astype(values.dtype, copy=False)


def _to_grid(values: np.ndarray, geometry: PoolingGeometry) -> np.ndarray:
    n, c = values.shape[:2]
    return np.ascontiguousarray(values.reshape(n, c, *geometry.output_shape))


def avg_pool_forward(input: Tensor4, geometry: PoolingGeometry) -> Tensor4:
    """Arithmetic mean over each (possibly border-truncated) region."""
    _check_input(input, geometry)
    sums = _gather(input, geometry).sum(axis=-1)
    return _to_grid(sums / geometry.region_sizes, geometry)


def avg_pool_backward(grad_output: Tensor4, geometry: PoolingGeometry) -> Tensor4:
    n, c = grad_output.shape[:2]
    flat = grad_output.reshape(n, c, geometry.region_count) / geometry.region_sizes
    k = geometry.region_index.shape[1]
    values = np.repeat(flat[..., None], k, axis=-1)
    targets = np.broadcast_to(geometry.region_index, (n, c) + geometry.region_index.shape)
    return _scatter(values, targets, n, c, geometry)


def max_pool_forward(input: Tensor4, geometry: PoolingGeometry) -> Tuple[Tensor4, SwitchMap]:
    """Region maximum; ties go to the lowest flat index."""
    _check_input(input, geometry)
    gathered = _gather(input, geometry, fill=-np.inf)
    choice = np.argmax(gathered, axis=-1)
    values = np.take_along_axis(gathered, choice[..., None], axis=-1)[..., 0]
    switches = geometry.region_index[np.arange(geometry.region_count), choice]
    return _to_grid(values, geometry), SwitchMap(_to_grid(switches, geometry), geometry)


def sample_switches(input: Tensor4, geometry: PoolingGeometry, rng: np.random.Generator,
                    distribution: str = "feedforward") -> SwitchMap:
    """
    Draw one location per region by inverse CDF.

    Args:
        input: Non-negative activations (only read for "feedforward")
        geometry: Region layout
        rng: Consumed for exactly n * c * regions uniforms
        distribution: "feedforward" samples p_i = a_i / sum(a); "uniform"
            samples every region element with equal probability

    Returns:
        SwitchMap; feed-forward draws on all-zero regions record NONE
    """
    _check_input(input, geometry)
    n, c = input.shape[:2]
    u = rng.random((n, c, geometry.region_count))

    if distribution == "uniform":
        choice = np.minimum((u * geometry.region_sizes).astype(np.int64), geometry.region_sizes - 1)
        switches = geometry.region_index[np.arange(geometry.region_count), choice]
        return SwitchMap(_to_grid(switches, geometry), geometry)
    if distribution != "feedforward":
        raise ValueError(f"Unknown switch distribution: {distribution!r}")

    _check_rectified(input)
    gathered = _gather(input, geometry).astype(np.float64, copy=False)
    cumulative = np.cumsum(gathered, axis=-1)
    total = cumulative[..., -1]
    target = u * total
    # first position whose running sum exceeds the target; always a nonzero entry
    choice = np.count_nonzero(cumulative <= target[..., None], axis=-1)
    last_nonzero = gathered.shape[-1] - 1 - np.argmax(gathered[..., ::-1] > 0, axis=-1)
    choice = np.minimum(choice, last_nonzero)
    switches = geometry.region_index[np.arange(geometry.region_count), choice]
    switches = np.where(total > 0, switches, NONE)
    return SwitchMap(_to_grid(switches, geometry), geometry)


def switch_pool_forward(input: Tensor4, switches: SwitchMap) -> Tensor4:
    """Read the activation at each recorded switch; NONE cells give 0."""
    geometry = switches.geometry
    _check_input(input, geometry)
    n, c = input.shape[:2]
    planes = input.reshape(n, c, geometry.plane_size)
    flat = switches.indices.reshape(n, c, -1)
    values = np.take_along_axis(planes, np.maximum(flat, 0), axis=-1)
    values = np.where(flat == NONE, 0.0, values).astype(input.dtype, copy=False)
    return _to_grid(values, geometry)


def stochastic_pool_forward(input: Tensor4, geometry: PoolingGeometry,
                            rng: np.random.Generator) -> Tuple[Tensor4, SwitchMap]:
    """Sample l ~ Multinomial(p) per region and output a_l."""
    _check_input(input, geometry)
    _check_rectified(input)
    switches = sample_switches(input, geometry, rng, "feedforward")
    return switch_pool_forward(input, switches), switches


def switch_pool_backward(grad_output: Tensor4, switches: SwitchMap,
                         geometry: PoolingGeometry) -> Tensor4:
    """Route each region's gradient to its switch; overlaps accumulate."""
    if switches.geometry != geometry:
        raise ConsistencyError("switch map was recorded for a different geometry")
    switches.validate()
    n, c = grad_output.shape[:2]
    if switches.indices.shape != grad_output.shape:
        raise DimensionError(
            f"grad_output shape {grad_output.shape} != switch map {switches.indices.shape}"
        )
    flat = switches.indices.reshape(n, c, -1)
    targets = np.where(flat == NONE, geometry.plane_size, flat)
    return _scatter(grad_output.reshape(n, c, -1), targets, n, c, geometry)


def prob_weight_forward(input: Tensor4, geometry: PoolingGeometry) -> Tensor4:
    """s_j = sum(p_i a_i) = sum(a_i^2) / sum(a_i); zero-sum regions give 0."""
    _check_input(input, geometry)
    _check_rectified(input)
    gathered = _gather(input, geometry)
    total = gathered.sum(axis=-1)
    squares = np.square(gathered).sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    return _to_grid(np.where(total > 0, squares / safe, 0.0), geometry)


def prob_weight_backward(input: Tensor4, geometry: PoolingGeometry,
                         grad_output: Tensor4) -> Tensor4:
    """ds_j/da_m = (2 a_m S - Q) / S^2 per region, accumulated over overlaps."""
    _check_input(input, geometry)
    _check_rectified(input)
    n, c = input.shape[:2]
    if grad_output.shape != (n, c) + geometry.output_shape:
        raise DimensionError(
            f"grad_output shape {grad_output.shape} != {(n, c) + geometry.output_shape}"
        )
    gathered = _gather(input, geometry)
    total = gathered.sum(axis=-1, keepdims=True)
    squares = np.square(gathered).sum(axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    local = np.where(total > 0, (2.0 * gathered * safe - squares) / np.square(safe), 0.0)
    values = local * grad_output.reshape(n, c, -1, 1)
    targets = np.broadcast_to(geometry.region_index, (n, c) + geometry.region_index.shape)
    return _scatter(values, targets, n, c, geometry)


def pool_forward(input: Tensor4, geometry: PoolingGeometry, mode: PoolingMode,
                 rng: Optional[np.random.Generator] = None,
                 switches: Optional[SwitchMap] = None) -> Tuple[Tensor4, Optional[SwitchMap]]:
    """
    Dispatch on mode. StochasticN behaves as Stochastic for one pass.

    Passing switches replays a recorded stochastic draw instead of sampling.
    """
    kind = mode.kind
    if kind is PoolingKind.AVERAGE:
        return avg_pool_forward(input, geometry), None
    if kind is PoolingKind.MAX:
        return max_pool_forward(input, geometry)
    if kind is PoolingKind.PROB_WEIGHT:
        return prob_weight_forward(input, geometry), None
    if switches is not None:
        _check_rectified(input)
        return switch_pool_forward(input, switches.validate()), switches
    if rng is None:
        raise ValueError("stochastic pooling needs an rng stream")
    return stochastic_pool_forward(input, geometry, rng)


def pool_backward(input: Tensor4, geometry: PoolingGeometry, mode: PoolingMode,
                  grad_output: Tensor4, switches: Optional[SwitchMap] = None) -> Tensor4:
    kind = mode.kind
    if kind is PoolingKind.AVERAGE:
        return avg_pool_backward(grad_output, geometry)
    if kind is PoolingKind.PROB_WEIGHT:
        return prob_weight_backward(input, geometry, grad_output)
    if switches is None:
        raise ConsistencyError(f"{mode} pooling backward needs the forward switch map")
    grad = switch_pool_backward(grad_output, switches, geometry)
    same_shape(grad, input, "pool_backward")
    return grad
