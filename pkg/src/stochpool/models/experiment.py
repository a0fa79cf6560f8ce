"""
Experiment configuration and per-epoch metrics records.

A configuration is a JSON document; every section maps onto a frozen
dataclass below. Unknown keys and invalid values raise ConfigError.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from ..exceptions import ConfigError
from .network_spec import (
    NetworkSpec, PoolLayer, PRESET_NAMES, ReluLayer, preset,
)
from .pooling_modes import PoolingMode, PROB_WEIGHT, STOCHASTIC

# (input shape, classes) per dataset name
DATASET_GEOMETRY: Dict[str, Tuple[Tuple[int, int, int], int]] = {
    "mnist": ((1, 28, 28), 10),
    "cifar10": ((3, 32, 32), 10),
    "cifar100": ((3, 32, 32), 100),
    "svhn": ((3, 32, 32), 10),
    "blobs": ((1, 8, 8), 2),
}


def _build(cls, data: Any, section: str):
    """Instantiate a config dataclass, reporting unknown keys and bad values."""
    if not isinstance(data, dict):
        raise ConfigError(f"[{section}] must be an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {e}") from e


@dataclass(frozen=True)
class DatasetConfig:
    """
    Which data to load and how to preprocess it.

    For mnist, train_paths/test_paths are (images, labels) IDX pairs; for
    the CIFAR family and svhn they list binary batch files. blobs is
    generated in memory from synthetic_train/synthetic_test.
    """

    name: str = "mnist"
    train_paths: Tuple[str, ...] = ()
    test_paths: Tuple[str, ...] = ()
    scale: bool = True
    mean_subtract: bool = False
    lcn: bool = False
    lcn_radius: int = 4
    lcn_floor: Optional[float] = None
    subsample_n: Optional[int] = None
    subsample_seed: int = 0
    validation_n: Optional[int] = None
    synthetic_train: int = 200
    synthetic_test: int = 100

    def __post_init__(self):
        if self.name not in DATASET_GEOMETRY:
            raise ConfigError(f"unknown dataset {self.name!r}, expected one of {sorted(DATASET_GEOMETRY)}")
        object.__setattr__(self, "train_paths", tuple(str(p) for p in self.train_paths))
        object.__setattr__(self, "test_paths", tuple(str(p) for p in self.test_paths))
        if self.name == "mnist" and self.train_paths and len(self.train_paths) != 2:
            raise ConfigError("mnist train_paths must be [images, labels]")
        if self.lcn_radius < 1:
            raise ConfigError(f"lcn_radius must be positive, got {self.lcn_radius}")
        if self.lcn_floor is not None and self.lcn_floor <= 0:
            raise ConfigError(f"lcn_floor must be positive, got {self.lcn_floor}")
        if self.subsample_n is not None and self.subsample_n < 1:
            raise ConfigError(f"subsample_n must be positive, got {self.subsample_n}")

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return DATASET_GEOMETRY[self.name][0]

    @property
    def classes(self) -> int:
        return DATASET_GEOMETRY[self.name][1]


@dataclass(frozen=True)
class PoolingConfig:
    train_mode: PoolingMode = STOCHASTIC
    test_mode: PoolingMode = PROB_WEIGHT
    window: int = 3
    stride: int = 2

    def __post_init__(self):
        for key in ("train_mode", "test_mode"):
            value = getattr(self, key)
            if not isinstance(value, PoolingMode):
                object.__setattr__(self, key, PoolingMode.parse(str(value)))
        if self.window < 1 or self.stride < 1:
            raise ConfigError(f"pooling window {self.window} / stride {self.stride} must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return {"train_mode": str(self.train_mode), "test_mode": str(self.test_mode),
                "window": self.window, "stride": self.stride}


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 0.001
    lr_conv: float = 1e-2
    lr_softmax: float = 1.0
    batch_size: int = 128
    filter_std: float = 0.01

    def __post_init__(self):
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("momentum and weight_decay must be non-negative")
        if self.lr_conv <= 0 or self.lr_softmax <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.filter_std <= 0:
            raise ConfigError(f"filter_std must be positive, got {self.filter_std}")

    @property
    def base_rates(self) -> Dict[str, float]:
        return {"conv": self.lr_conv, "softmax": self.lr_softmax}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything that determines a run. Together with the code version a
    config reproduces its metrics bit-exactly.
    """

    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    network: Union[str, Dict[str, Any]] = "conv-64-64-64"
    response_norm: bool = True
    pooling: PoolingConfig = field(default_factory=PoolingConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    epochs: int = 280
    seed: int = 0
    output_dir: str = "runs/experiment"
    checkpoint_every: int = 1
    eval_batch_size: int = 500
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.checkpoint_every < 1 or self.eval_batch_size < 1:
            raise ConfigError("checkpoint_every and eval_batch_size must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if isinstance(self.network, str) and self.network not in PRESET_NAMES:
            raise ConfigError(f"unknown network preset {self.network!r}, expected one of {PRESET_NAMES}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("experiment config must be a JSON object")
        values = dict(data)
        sections = {"dataset": DatasetConfig, "pooling": PoolingConfig, "optimizer": OptimizerConfig}
        for key, section_cls in sections.items():
            if key in values:
                values[key] = _build(section_cls, values[key], key)
        config = _build(cls, values, "experiment")
        config.network_spec()
        return config

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["dataset"]["train_paths"] = list(self.dataset.train_paths)
        data["dataset"]["test_paths"] = list(self.dataset.test_paths)
        data["pooling"] = self.pooling.to_dict()
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """
        Copy with top-level fields replaced; None values are ignored.

        Nested sections accept keyword groups, e.g.
        with_overrides(pooling={"train_mode": "max"}).
        """
        changes: Dict[str, Any] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            current = getattr(self, key, None)
            if isinstance(value, dict) and isinstance(current, (DatasetConfig, PoolingConfig, OptimizerConfig)):
                try:
                    value = replace(current, **value)
                except TypeError as e:
                    raise ConfigError(f"[{key}] {e}") from e
            changes[key] = value
        try:
            return replace(self, **changes)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def network_spec(self) -> NetworkSpec:
        """Resolve the preset or inline network with this config's pooling applied."""
        try:
            if isinstance(self.network, str):
                spec = preset(self.network, self.dataset.input_shape, self.dataset.classes,
                              self.response_norm)
            else:
                spec = NetworkSpec.from_dict(self.network)
                if not self.response_norm:
                    spec = spec.without_response_norm()
            spec = spec.with_pooling(self.pooling.window, self.pooling.stride,
                                     self.pooling.train_mode, self.pooling.test_mode)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid network: {e}") from e
        if tuple(spec.input_shape) != self.dataset.input_shape:
            raise ConfigError(
                f"network input {spec.input_shape} does not match dataset {self.dataset.input_shape}"
            )
        check_rectified_pooling(spec)
        return spec


def check_rectified_pooling(spec: NetworkSpec) -> None:
    """Stochastic and prob-weight pool layers must sit directly after a ReLU."""
    for i in spec.pool_layer_indices:
        layer: PoolLayer = spec.layers[i]
        needs = layer.train_mode.requires_rectified or layer.test_mode.requires_rectified
        if needs and (i == 0 or not isinstance(spec.layers[i - 1], ReluLayer)):
            raise ConfigError(
                f"pool layer {i} uses {layer.train_mode}/{layer.test_mode} but its input is not rectified"
            )


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return ExperimentConfig.from_dict(data)


METRICS_COLUMNS = ("epoch", "train_error", "test_error", "train_loss", "lr_conv", "lr_softmax")
TIMING_COLUMNS = ("epoch", "wall_clock_seconds")


@dataclass(frozen=True)
class MetricsRow:
    """One epoch of training. Errors are percentages."""

    epoch: int
    train_error: float
    test_error: float
    train_loss: float
    lr_conv: float
    lr_softmax: float
    wall_clock_seconds: float = 0.0

    def __post_init__(self):
        if self.epoch < 0:
            raise ValueError(f"epoch must be non-negative, got {self.epoch}")
        for key in ("train_error", "test_error"):
            value = getattr(self, key)
            if not 0.0 <= value <= 100.0:
                raise ValueError(f"{key} {value} outside [0, 100]")

    def metrics_values(self) -> Tuple[Any, ...]:
        return tuple(getattr(self, column) for column in METRICS_COLUMNS)

    def timing_values(self) -> Tuple[Any, ...]:
        return (self.epoch, self.wall_clock_seconds)
