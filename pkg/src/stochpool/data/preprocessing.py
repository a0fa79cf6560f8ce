"""
Dataset container and the preprocessing pipeline.

Every transform returns a new Dataset and appends one entry to its
provenance, so a dataset's provenance fully describes how it was derived
from the raw files.
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..exceptions import ContractViolationError, DimensionError
from ..utils import make_rng

logger = logging.getLogger(__name__)

# divisors below this are raised to it so flat patches do not blow up
MIN_DIVISOR = 1e-8


@dataclass(frozen=True, eq=False)
class Dataset:
    """Images (n, c, h, w), integer labels and an append-only provenance trail."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be (n, c, h, w), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def derive(self, step: str, images: Optional[np.ndarray] = None,
               labels: Optional[np.ndarray] = None) -> "Dataset":
        return replace(
            self,
            images=self.images if images is None else images,
            labels=self.labels if labels is None else labels,
            provenance=self.provenance + (step,),
        )

    def has_step(self, prefix: str) -> bool:
        return any(step.split(":", 1)[0] == prefix for step in self.provenance)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def scale_unit(dataset: Dataset) -> Dataset:
    """Map raw 0-255 pixel values to [0, 1]."""
    if dataset.has_step("scale_unit"):
        raise ContractViolationError("dataset is already scaled to [0, 1]")
    return dataset.derive("scale_unit", images=dataset.images.astype(np.float64) / 255.0)


def per_pixel_mean_subtract(train: Dataset, *others: Dataset) -> Tuple[Dataset, List[Dataset], np.ndarray]:
    """
    Subtract the training set's per-pixel mean image from every split.

    Returns:
        (train, others, mean image shaped (1, c, h, w))
    """
    for other in others:
        if other.image_shape != train.image_shape:
            raise DimensionError(
                f"split image shape {other.image_shape} != training shape {train.image_shape}"
            )
    mean = train.images.mean(axis=0, keepdims=True)
    centered_train = train.derive("mean_subtract:fit=train", images=train.images - mean)
    centered = [other.derive("mean_subtract:fit=train", images=other.images - mean) for other in others]
    return centered_train, centered, mean


def gaussian_kernel(radius: int, sigma: Optional[float] = None) -> np.ndarray:
    """Normalized (2r+1, 2r+1) Gaussian window; sigma defaults to radius / 2."""
    if radius < 1:
        raise ValueError(f"kernel radius must be positive, got {radius}")
    sigma = sigma or radius / 2.0
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    profile = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = np.outer(profile, profile)
    return kernel / kernel.sum()


def local_contrast_normalize(dataset: Dataset, kernel_radius: int = 4,
                             epsilon_floor: Optional[float] = None) -> Dataset:
    """
    Per-channel subtractive then divisive normalization with a Gaussian window.

    Each pixel loses its weighted local mean and is divided by
    max(weighted local std, floor). With epsilon_floor=None the floor is
    the mean local std of that image channel.
    """
    if epsilon_floor is not None and epsilon_floor <= 0:
        raise ValueError(f"epsilon_floor must be positive, got {epsilon_floor}")
    kernel = gaussian_kernel(kernel_radius)[None, None]
    images = dataset.images.astype(np.float64)

    local_mean = ndimage.correlate(images, kernel, mode="reflect")
    centered = images - local_mean
    local_std = np.sqrt(np.maximum(ndimage.correlate(centered ** 2, kernel, mode="reflect"), 0.0))

    if epsilon_floor is None:
        floor = local_std.mean(axis=(2, 3), keepdims=True)
    else:
        floor = np.full((1, 1, 1, 1), float(epsilon_floor))
    divisor = np.maximum(np.maximum(local_std, floor), MIN_DIVISOR)

    floor_label = "mean_std" if epsilon_floor is None else repr(float(epsilon_floor))
    return dataset.derive(f"lcn:radius={kernel_radius},floor={floor_label}", images=centered / divisor)


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample of n items without replacement, original order kept."""
    if not 0 < n <= len(dataset):
        raise ValueError(f"cannot draw {n} items from a dataset of {len(dataset)}")
    rng = make_rng(seed, "subsample")
    chosen = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return dataset.derive(f"subsample:n={n},seed={seed}",
                          images=dataset.images[chosen], labels=dataset.labels[chosen])


def split_validation(dataset: Dataset, n_val: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Hold out n_val random items; returns (remaining train, validation)."""
    if not 0 < n_val < len(dataset):
        raise ValueError(f"validation size {n_val} must lie in (0, {len(dataset)})")
    rng = make_rng(seed, "subsample", 1)
    order = rng.permutation(len(dataset))
    held, kept = np.sort(order[:n_val]), np.sort(order[n_val:])
    tag = f"n_val={n_val},seed={seed}"
    train = dataset.derive(f"split:train,{tag}", images=dataset.images[kept], labels=dataset.labels[kept])
    val = dataset.derive(f"split:validation,{tag}", images=dataset.images[held], labels=dataset.labels[held])
    return train, val
