"""
Top-down reconstruction of feature activations in pixel space.

Walking down from a chosen layer, pool layers are undone by unpooling
through a switch map and conv layers by their transposed filters. Each
pool layer takes its switches from a SwitchSource: the switches recorded
in the forward trace, a fresh draw from the feed-forward multinomial, a
uniform draw over the region, the region argmax, or an even spread.
Response normalization is skipped on the way down; ReLU layers clamp the
reconstruction to non-negative values unless rectify is off.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ...exceptions import ConsistencyError, ContractViolationError, DimensionError
from ...models.network_spec import ConvLayer, NetworkSpec, PoolLayer, ReluLayer, SoftmaxLayer
from ...utils import make_rng
from .network import ForwardTrace, Params, conv_params, plan_network
from .pooling import (
    PoolingGeometry, SwitchMap, avg_pool_backward, max_pool_forward, sample_switches,
    switch_pool_backward,
)
from .tensor import ConvParams, Tensor4, conv2d_transpose

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordedSource:
    """Switches from the forward pass; None means take them from the trace."""

    switches: Optional[SwitchMap] = None


@dataclass(frozen=True)
class FeedForwardSource:
    """Resample from p_i = a_i / sum(a) of the recorded activations."""

    seed: int
    sample: int = 0


@dataclass(frozen=True)
class UniformSource:
    """Resample uniformly over each region."""

    seed: int
    sample: int = 0


@dataclass(frozen=True)
class MaxSource:
    pass


@dataclass(frozen=True)
class AverageSource:
    pass


SwitchSource = Union[RecordedSource, FeedForwardSource, UniformSource, MaxSource, AverageSource]


def parse_source(text: str, seed: int = 0, sample: int = 0) -> SwitchSource:
    """Map a short name (rec, ff, un, max, avg) to a source."""
    name = text.strip().lower()
    if name in ("rec", "recorded"):
        return RecordedSource()
    if name in ("ff", "feedforward"):
        return FeedForwardSource(seed, sample)
    if name in ("un", "uniform"):
        return UniformSource(seed, sample)
    if name == "max":
        return MaxSource()
    if name in ("avg", "average"):
        return AverageSource()
    raise ValueError(f"Unknown switch source: {text!r}")


def unpool(pooled: Tensor4, switches: SwitchMap, geometry: PoolingGeometry) -> Tensor4:
    """
    Place each pooled value at its switch in a zero map of the input size.

    Overlapping placements add up; NONE cells place nothing.
    """
    return switch_pool_backward(pooled, switches, geometry)


def deconv_layer(feature: Tensor4, params: ConvParams, input_hw) -> Tensor4:
    """Transposed-filter pass of one conv layer, bias excluded."""
    return conv2d_transpose(feature, params, tuple(input_hw))


def _resolve_switches(index: int, source: SwitchSource, trace: ForwardTrace,
                      geometry: PoolingGeometry) -> Optional[SwitchMap]:
    """None means spread evenly (average unpooling)."""
    activations = trace.inputs[index]
    if isinstance(source, RecordedSource):
        switches = source.switches if source.switches is not None else trace.switches.get(index)
        if switches is None:
            raise ConsistencyError(
                f"pool layer {index} recorded no switches in this trace ({trace.modes.get(index)} mode)"
            )
        if switches.geometry != geometry:
            raise ConsistencyError(f"switches for layer {index} were recorded with another pooling geometry")
        if switches.indices.shape[:2] != activations.shape[:2]:
            raise ConsistencyError(f"recorded switches for layer {index} come from a different batch")
        return switches.validate()
    if isinstance(source, FeedForwardSource):
        rng = make_rng(source.seed, "visualize", source.sample, index, 0)
        return sample_switches(activations, geometry, rng, "feedforward")
    if isinstance(source, UniformSource):
        rng = make_rng(source.seed, "visualize", source.sample, index, 1)
        return sample_switches(activations, geometry, rng, "uniform")
    if isinstance(source, MaxSource):
        return max_pool_forward(activations, geometry)[1]
    if isinstance(source, AverageSource):
        return None
    raise TypeError(f"not a switch source: {source!r}")


def reconstruct(spec: NetworkSpec, params: Params, trace: ForwardTrace, from_layer: int,
                sources: Mapping[int, SwitchSource], rectify: bool = True,
                feature: Optional[Tensor4] = None) -> Tensor4:
    """
    Project the output of layer from_layer back to the input pixels.

    Args:
        spec: Network the trace was recorded with
        params: Its parameters
        trace: Forward trace of the input being visualized
        from_layer: Index of the layer whose output is projected
        sources: Pool layer index -> SwitchSource, one per pool layer at or below from_layer
        rectify: Clamp negatives at every ReLU on the way down
        feature: Replacement for the layer's recorded output, e.g. a single
            isolated activation

    Returns:
        Tensor shaped like the network input
    """
    if trace.spec_hash != spec.spec_hash():
        raise ConsistencyError("trace was recorded for a different network spec")
    plans = plan_network(spec)
    if not 0 <= from_layer < len(trace.outputs) or isinstance(plans[from_layer].layer, SoftmaxLayer):
        raise ValueError(f"cannot reconstruct from layer {from_layer}")
    missing = [i for i in spec.pool_layer_indices if i <= from_layer and i not in sources]
    if missing:
        raise ContractViolationError(f"no switch source for pool layer(s) {missing}")

    x = trace.outputs[from_layer] if feature is None else np.asarray(feature, dtype=np.float64)
    if x.shape != trace.outputs[from_layer].shape:
        raise DimensionError(f"feature shape {x.shape} != layer output {trace.outputs[from_layer].shape}")

    for plan in reversed(plans[:from_layer + 1]):
        layer = plan.layer
        if isinstance(layer, ConvLayer):
            x = deconv_layer(x, conv_params(plan, params), plan.input_shape[1:])
        elif isinstance(layer, ReluLayer):
            if rectify:
                x = np.maximum(x, 0.0)
        elif isinstance(layer, PoolLayer):
            switches = _resolve_switches(plan.index, sources[plan.index], trace, plan.geometry)
            if switches is None:
                x = avg_pool_backward(x, plan.geometry)
            else:
                x = unpool(x, switches, plan.geometry)
    return x


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two images; 0 when either is constant."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"cannot correlate shapes {a.shape} and {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / denom) if denom > 0 else 0.0


def similarity_statistic(ff_samples: Sequence[np.ndarray],
                         un_samples: Sequence[np.ndarray]) -> Dict[str, float]:
    """
    Mean pairwise correlation among feed-forward resamples and between
    feed-forward and uniform resamples.
    """
    if len(ff_samples) < 2 or not un_samples:
        raise ValueError("need at least two feed-forward samples and one uniform sample")
    ff_pairs = [normalized_cross_correlation(ff_samples[i], ff_samples[j])
                for i in range(len(ff_samples)) for j in range(i + 1, len(ff_samples))]
    cross = [normalized_cross_correlation(f, u) for f in ff_samples for u in un_samples]
    return {"ff_ff": float(np.mean(ff_pairs)), "ff_un": float(np.mean(cross))}


def to_uint8_image(image: np.ndarray) -> np.ndarray:
    """Min-max scale a (c, h, w) map to 0..255; constant maps become 0."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise DimensionError(f"expected (c, h, w), got {image.shape}")
    lo, hi = image.min(), image.max()
    if hi <= lo:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.rint((image - lo) / (hi - lo) * 255.0).astype(np.uint8)


def montage(images: List[np.ndarray], grid: int, border: int = 1) -> np.ndarray:
    """Tile grid*grid uint8 (c, h, w) images row-major with a black border."""
    if len(images) != grid * grid:
        raise ValueError(f"montage of {grid}x{grid} needs {grid * grid} images, got {len(images)}")
    c, h, w = images[0].shape
    out = np.zeros((c, grid * (h + border) + border, grid * (w + border) + border), dtype=np.uint8)
    for k, image in enumerate(images):
        r, col = divmod(k, grid)
        top, left = border + r * (h + border), border + col * (w + border)
        out[:, top:top + h, left:left + w] = image
    return out
