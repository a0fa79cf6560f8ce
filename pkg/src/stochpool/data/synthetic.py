"""Seeded synthetic datasets for sanity runs and tests."""

from typing import Tuple

import numpy as np

from .preprocessing import Dataset


def make_blobs(n: int = 200, seed: int = 0, image_shape: Tuple[int, int, int] = (1, 8, 8),
               classes: int = 2, noise: float = 0.1) -> Dataset:
    """
    Linearly separable image classes.

    Class k lights up the k-th vertical band of the image; Gaussian noise
    is added on top. Labels cycle 0, 1, ..., classes-1 so classes are
    balanced.
    """
    rng = np.random.default_rng(seed)
    c, h, w = image_shape
    labels = np.arange(n) % classes
    templates = np.zeros((classes, c, h, w))
    bands = np.array_split(np.arange(w), classes)
    for k, cols in enumerate(bands):
        templates[k, :, :, cols] = 1.0
    images = templates[labels] + noise * rng.standard_normal((n, c, h, w))
    return Dataset(images=images, labels=labels.astype(np.int64), class_count=classes,
                   provenance=(f"source:blobs:n={n},seed={seed},classes={classes}",))
