"""
Declarative types: pooling modes, network specs and experiment configs.
"""

from .experiment import (
    DatasetConfig, ExperimentConfig, MetricsRow, OptimizerConfig, PoolingConfig, load_config,
)
from .network_spec import (
    ConvLayer, NetworkSpec, PoolLayer, ReluLayer, ResponseNormLayer, SoftmaxLayer, preset,
    standard_network, toy_network,
)
from .pooling_modes import AVERAGE, MAX, PROB_WEIGHT, STOCHASTIC, Phase, PoolingKind, PoolingMode

__all__ = [
    "AVERAGE", "MAX", "PROB_WEIGHT", "STOCHASTIC",
    "ConvLayer", "DatasetConfig", "ExperimentConfig", "MetricsRow", "NetworkSpec",
    "OptimizerConfig", "Phase", "PoolLayer", "PoolingConfig", "PoolingKind", "PoolingMode",
    "ReluLayer", "ResponseNormLayer", "SoftmaxLayer", "load_config", "preset",
    "standard_network", "toy_network",
]
