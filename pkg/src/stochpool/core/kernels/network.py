"""
Network assembly: parameter initialization, forward pass with trace
caching, backward pass and Stochastic-N ensemble prediction.

Parameters live in an ordered dict keyed "conv<k>.filters", "conv<k>.bias",
"softmax.weights" and "softmax.bias". The network only reads them; the
optimizer is the single writer.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from ...exceptions import ConsistencyError, DimensionError
from ...models.network_spec import (
    ConvLayer, NetworkSpec, PoolLayer, ReluLayer, ResponseNormLayer, SoftmaxLayer,
)
from ...models.pooling_modes import Phase, PoolingMode, PoolingKind, STOCHASTIC
from .normalization import (
    dense_backward, dense_forward, lrn_backward, lrn_forward, softmax, softmax_xent,
)
from .pooling import PoolingGeometry, SwitchMap, pool_backward, pool_forward
from .tensor import ConvParams, Tensor4, conv2d_backward, conv2d_forward, conv_output_shape
from .tensor import relu_backward, relu_forward

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass
class LayerPlan:
    """Static per-layer facts derived from a spec: shapes, names, geometry."""

    index: int
    layer: object
    input_shape: Tuple[int, int, int]
    output_shape: Tuple[int, int, int]
    param_prefix: Optional[str] = None
    geometry: Optional[PoolingGeometry] = None


@lru_cache(maxsize=64)
def plan_network(spec: NetworkSpec) -> Tuple[LayerPlan, ...]:
    """
    Propagate shapes through the spec.

    Raises:
        DimensionError: when a layer cannot accept its input shape
    """
    plans: List[LayerPlan] = []
    shape = tuple(spec.input_shape)
    conv_count = 0
    for i, layer in enumerate(spec.layers):
        c, h, w = shape
        prefix, geometry = None, None
        if isinstance(layer, ConvLayer):
            conv_count += 1
            prefix = f"conv{conv_count}"
            oh, ow = conv_output_shape(h, w, layer.kernel, layer.kernel, layer.stride, layer.padding)
            out = (layer.out_maps, oh, ow)
        elif isinstance(layer, PoolLayer):
            geometry = PoolingGeometry(tuple(layer.window), layer.stride, (h, w))
            out = (c,) + geometry.output_shape
        elif isinstance(layer, SoftmaxLayer):
            prefix = "softmax"
            out = (layer.classes, 1, 1)
        else:
            out = shape
        plans.append(LayerPlan(i, layer, shape, out, prefix, geometry))
        shape = out
    return tuple(plans)


def param_shapes(spec: NetworkSpec) -> "OrderedDict[str, Tuple[int, ...]]":
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    for plan in plan_network(spec):
        if isinstance(plan.layer, ConvLayer):
            k = plan.layer.kernel
            shapes[f"{plan.param_prefix}.filters"] = (plan.layer.out_maps, plan.input_shape[0], k, k)
            shapes[f"{plan.param_prefix}.bias"] = (plan.layer.out_maps,)
        elif isinstance(plan.layer, SoftmaxLayer):
            inputs = int(np.prod(plan.input_shape))
            shapes["softmax.weights"] = (plan.layer.classes, inputs)
            shapes["softmax.bias"] = (plan.layer.classes,)
    return shapes


def init_params(spec: NetworkSpec, rng: np.random.Generator, filter_std: float = 0.01,
                dtype=np.float64) -> Params:
    """Zero-mean Gaussian weights (std filter_std), zero biases."""
    params: Params = OrderedDict()
    for name, shape in param_shapes(spec).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (rng.standard_normal(shape) * filter_std).astype(dtype)
    return params


def check_params(spec: NetworkSpec, params: Params) -> None:
    expected = param_shapes(spec)
    if list(expected) != list(params):
        raise ConsistencyError(f"parameter names {list(params)} do not match spec {list(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise DimensionError(f"{name} has shape {params[name].shape}, spec needs {shape}")


def conv_params(plan: LayerPlan, params: Params) -> ConvParams:
    layer = plan.layer
    return ConvParams(params[f"{plan.param_prefix}.filters"], params[f"{plan.param_prefix}.bias"],
                      stride=layer.stride, padding=layer.padding)


@dataclass
class ForwardTrace:
    """
    Everything one forward pass produced: per-layer inputs and outputs,
    switch maps of pool layers that recorded them, the pooling mode each
    pool layer actually ran, and which rng stream was consumed.
    """

    spec_hash: str
    phase: Phase
    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    switches: Dict[int, SwitchMap] = field(default_factory=dict)
    modes: Dict[int, PoolingMode] = field(default_factory=dict)
    rng_streams: List[str] = field(default_factory=list)

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]

    @property
    def probabilities(self) -> np.ndarray:
        return softmax(self.logits)


def network_forward(spec: NetworkSpec, params: Params, batch: Tensor4, phase: Phase,
                    rng: Optional[np.random.Generator] = None,
                    replay_switches: Optional[Dict[int, SwitchMap]] = None,
                    stream_label: str = "") -> ForwardTrace:
    """
    Run the layer stack.

    Args:
        spec: Network description
        params: Parameters keyed as produced by init_params
        batch: (n, c, h, w) inputs matching spec.input_shape
        phase: TRAIN uses each pool layer's train_mode, TEST its test_mode
        rng: Stream for stochastic pool layers; untouched otherwise
        replay_switches: Layer index -> SwitchMap to reuse instead of sampling
        stream_label: Recorded in the trace when rng is consumed

    Returns:
        ForwardTrace sufficient for network_backward and reconstruction
    """
    if tuple(batch.shape[1:]) != tuple(spec.input_shape):
        raise DimensionError(f"batch shape {batch.shape[1:]} != spec input {spec.input_shape}")
    replay_switches = replay_switches or {}
    dtype = params["softmax.weights"].dtype
    trace = ForwardTrace(spec_hash=spec.spec_hash(), phase=phase)
    x = np.ascontiguousarray(batch, dtype=dtype)

    for plan in plan_network(spec):
        layer = plan.layer
        trace.inputs.append(x)
        if isinstance(layer, ConvLayer):
            x = conv2d_forward(x, conv_params(plan, params))
        elif isinstance(layer, ReluLayer):
            x = relu_forward(x)
        elif isinstance(layer, PoolLayer):
            mode = layer.train_mode if phase is Phase.TRAIN else layer.test_mode
            replay = replay_switches.get(plan.index)
            if mode.is_stochastic and replay is None:
                if rng is None:
                    raise ValueError(f"layer {plan.index} pools stochastically but no rng was given")
                if stream_label and stream_label not in trace.rng_streams:
                    trace.rng_streams.append(stream_label)
            x, switches = pool_forward(x, plan.geometry, mode, rng=rng, switches=replay)
            trace.modes[plan.index] = mode
            if switches is not None:
                trace.switches[plan.index] = switches
        elif isinstance(layer, ResponseNormLayer):
            x = lrn_forward(x, layer.size, layer.alpha, layer.beta, layer.k)
        elif isinstance(layer, SoftmaxLayer):
            features = x.reshape(x.shape[0], -1)
            x = dense_forward(features, params["softmax.weights"], params["softmax.bias"])
        trace.outputs.append(x)
    return trace


def network_backward(spec: NetworkSpec, params: Params, trace: ForwardTrace,
                     labels: np.ndarray) -> Tuple[float, Params]:
    """
    Backpropagate softmax cross-entropy through a recorded trace.

    Returns:
        (loss, gradients keyed like params)
    """
    if trace.spec_hash != spec.spec_hash():
        raise ConsistencyError("trace was recorded for a different network spec")
    plans = plan_network(spec)
    if len(trace.outputs) != len(plans):
        raise ConsistencyError("trace is incomplete for this spec")
    check_params(spec, params)

    grads: Params = OrderedDict((name, None) for name in params)
    loss = 0.0
    grad = None
    for plan in reversed(plans):
        layer, inp = plan.layer, trace.inputs[plan.index]
        if isinstance(layer, SoftmaxLayer):
            loss, grad_logits = softmax_xent(trace.outputs[plan.index], labels)
            features = inp.reshape(inp.shape[0], -1)
            grad_features, grads["softmax.weights"], grads["softmax.bias"] = dense_backward(
                features, params["softmax.weights"], grad_logits)
            grad = grad_features.reshape(inp.shape)
        elif isinstance(layer, ResponseNormLayer):
            grad = lrn_backward(inp, grad, layer.size, layer.alpha, layer.beta, layer.k)
        elif isinstance(layer, PoolLayer):
            mode = trace.modes[plan.index]
            grad = pool_backward(inp, plan.geometry, mode, grad, trace.switches.get(plan.index))
        elif isinstance(layer, ReluLayer):
            grad = relu_backward(inp, grad)
        elif isinstance(layer, ConvLayer):
            prefix = plan.param_prefix
            grad, grads[f"{prefix}.filters"], grads[f"{prefix}.bias"] = conv2d_backward(
                inp, conv_params(plan, params), grad)
    return loss, grads


def predict_stochastic_n(spec: NetworkSpec, params: Params, batch: Tensor4, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Mean softmax output of n independent stochastic-pooling passes."""
    if n < 1:
        raise ValueError(f"Stochastic-N needs n >= 1, got {n}")
    sampled = spec.with_pooling(test_mode=STOCHASTIC)
    total = None
    for _ in range(n):
        probs = network_forward(sampled, params, batch, Phase.TEST, rng).probabilities
        total = probs if total is None else total + probs
    return total / n


def predict(spec: NetworkSpec, params: Params, batch: Tensor4,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Test-phase class probabilities.

    A StochasticN test mode on any pool layer switches to the N-pass
    ensemble.
    """
    counts = [plan.layer.test_mode.count for plan in plan_network(spec)
              if isinstance(plan.layer, PoolLayer)
              and plan.layer.test_mode.kind is PoolingKind.STOCHASTIC_N]
    if counts:
        return predict_stochastic_n(spec, params, batch, max(counts), rng)
    return network_forward(spec, params, batch, Phase.TEST, rng).probabilities
