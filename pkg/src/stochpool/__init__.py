"""
stochpool

Convolutional networks built from scratch on numpy, with stochastic
pooling at train time and probabilistic weighting at test time.
"""

__version__ = "1.1.0"

from .core import ExperimentRunner
from .models.experiment import ExperimentConfig, load_config
from .models.network_spec import NetworkSpec, standard_network, preset, toy_network
from .models.pooling_modes import PoolingMode, Phase

__all__ = [
    "ExperimentConfig",
    "ExperimentRunner",
    "NetworkSpec",
    "Phase",
    "PoolingMode",
    "load_config",
    "preset",
    "standard_network",
    "toy_network",
]
