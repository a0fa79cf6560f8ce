"""
Dataset loading and the configured preprocessing chain.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..exceptions import ConfigError
from ..models.experiment import DatasetConfig
from .loaders import convert_svhn, load_cifar_binary, load_idx, load_svhn_binary
from .preprocessing import (
    Dataset, local_contrast_normalize, per_pixel_mean_subtract, scale_unit, split_validation,
    subsample,
)
from .synthetic import make_blobs

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DataBundle:
    """Preprocessed splits plus what inference needs to repeat the preprocessing."""

    train: Dataset
    test: Dataset
    validation: Optional[Dataset] = None
    mean_image: Optional[np.ndarray] = None

    @property
    def provenance(self) -> Tuple[str, ...]:
        return self.train.provenance


def _load_raw(config: DatasetConfig) -> Tuple[Dataset, Dataset]:
    if config.name == "blobs":
        shape, classes = config.input_shape, config.classes
        return (make_blobs(config.synthetic_train, config.subsample_seed, shape, classes),
                make_blobs(config.synthetic_test, config.subsample_seed + 1, shape, classes))
    if not config.train_paths or not config.test_paths:
        raise ConfigError(f"dataset {config.name} needs train_paths and test_paths")
    if config.name == "mnist":
        if len(config.test_paths) != 2:
            raise ConfigError("mnist test_paths must be [images, labels]")
        return load_idx(*config.train_paths), load_idx(*config.test_paths)
    if config.name == "svhn":
        return load_svhn_binary(config.train_paths), load_svhn_binary(config.test_paths)
    return (load_cifar_binary(config.train_paths, config.classes),
            load_cifar_binary(config.test_paths, config.classes))


def load_dataset(config: DatasetConfig) -> DataBundle:
    """
    Load the configured splits and apply, in order: subsample, validation
    split, scale to [0, 1], local contrast normalization, per-pixel mean
    subtraction. Scaling applies to byte-valued file data only.
    """
    train, test = _load_raw(config)
    if train.image_shape != config.input_shape:
        raise ConfigError(f"{config.name} images are {train.image_shape}, expected {config.input_shape}")

    if config.subsample_n is not None:
        if config.subsample_n > len(train):
            raise ConfigError(f"subsample_n {config.subsample_n} exceeds training set size {len(train)}")
        # a full-size draw keeps every item but still records (n, seed)
        train = subsample(train, config.subsample_n, config.subsample_seed)

    validation = None
    if config.validation_n:
        train, validation = split_validation(train, config.validation_n, config.subsample_seed)

    splits = [d for d in (train, test, validation) if d is not None]
    if config.scale and config.name != "blobs":
        splits = [scale_unit(d) for d in splits]
    if config.lcn:
        splits = [local_contrast_normalize(d, config.lcn_radius, config.lcn_floor) for d in splits]

    mean_image = None
    if config.mean_subtract:
        first, rest, mean_image = per_pixel_mean_subtract(splits[0], *splits[1:])
        splits = [first] + rest

    train, test = splits[0], splits[1]
    validation = splits[2] if validation is not None else None
    logger.info(f"Dataset {config.name}: {len(train)} train / {len(test)} test, "
                f"steps {', '.join(train.provenance)}")
    return DataBundle(train=train, test=test, validation=validation, mean_image=mean_image)


__all__ = [
    "DataBundle",
    "Dataset",
    "convert_svhn",
    "load_cifar_binary",
    "load_dataset",
    "load_idx",
    "load_svhn_binary",
    "local_contrast_normalize",
    "make_blobs",
    "per_pixel_mean_subtract",
    "scale_unit",
    "split_validation",
    "subsample",
]
