"""
Numeric kernels: tensors and convolution, pooling, normalization, network
assembly, optimization and top-down visualization.
"""

from .tensor import (
    ConvParams, Tensor4, as_tensor4, conv2d_backward, conv2d_forward, conv2d_transpose,
    conv_output_shape, relu_backward, relu_forward,
)
from .pooling import (
    NONE, PoolingGeometry, RegionDistribution, SwitchMap, avg_pool_backward, avg_pool_forward,
    enumerate_regions, max_pool_forward, model_count, pool_backward, pool_forward,
    prob_weight_backward, prob_weight_forward, region_probabilities, sample_switches,
    stochastic_pool_forward, switch_pool_backward, switch_pool_forward,
)
from .normalization import (
    dense_backward, dense_forward, lrn_backward, lrn_forward, softmax, softmax_xent,
)
from .network import (
    ForwardTrace, init_params, network_backward, network_forward, param_shapes, plan_network,
    predict, predict_stochastic_n,
)
from .optim import SgdState, lr_at_epoch, momentum_step
from .deconviz import (
    AverageSource, FeedForwardSource, MaxSource, RecordedSource, UniformSource, deconv_layer,
    montage, normalized_cross_correlation, reconstruct, similarity_statistic, to_uint8_image,
    unpool,
)

__all__ = [
    "NONE", "AverageSource", "ConvParams", "FeedForwardSource", "ForwardTrace", "MaxSource",
    "PoolingGeometry", "RecordedSource", "RegionDistribution", "SgdState", "SwitchMap", "Tensor4",
    "UniformSource", "as_tensor4", "avg_pool_backward", "avg_pool_forward", "conv2d_backward",
    "conv2d_forward", "conv2d_transpose", "conv_output_shape", "deconv_layer", "dense_backward",
    "dense_forward", "enumerate_regions", "init_params", "lr_at_epoch", "lrn_backward", "lrn_forward",
    "max_pool_forward", "model_count", "momentum_step", "montage", "network_backward",
    "network_forward", "normalized_cross_correlation", "param_shapes", "plan_network", "pool_backward",
    "pool_forward", "predict", "predict_stochastic_n", "prob_weight_backward", "prob_weight_forward",
    "reconstruct", "region_probabilities", "relu_backward", "relu_forward", "sample_switches",
    "similarity_statistic", "softmax", "softmax_xent", "stochastic_pool_forward",
    "switch_pool_backward", "switch_pool_forward", "to_uint8_image", "unpool",
]
