"""
Test configuration and fixtures.
"""

import json
import os
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path for testing
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from stochpool.models.network_spec import toy_network  # noqa: E402

MNIST_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def write_idx_images(path: Path, images: np.ndarray) -> Path:
    """Independent IDX image writer: big-endian header then raw bytes."""
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        for image in images:
            for row in image:
                f.write(bytes(int(v) for v in row))
    return path


def write_idx_labels(path: Path, labels, magic: int = 0x00000801) -> Path:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", magic, len(labels)))
        f.write(bytes(int(v) for v in labels))
    return path


def write_cifar_records(path: Path, images: np.ndarray, labels, coarse=None) -> Path:
    """CIFAR record writer: label byte(s), then R, G and B planes row by row."""
    with open(path, "wb") as f:
        for i, image in enumerate(images):
            if coarse is not None:
                f.write(bytes([int(coarse[i])]))
            f.write(bytes([int(labels[i])]))
            for channel in image:
                for row in channel:
                    f.write(bytes(int(v) for v in row))
    return path


@pytest.fixture
def rng():
    """Seeded generator for test data."""
    return np.random.default_rng(1234)


@pytest.fixture
def toy_spec():
    """One conv stage on 8x8 single-channel images, two classes."""
    return toy_network(input_shape=(1, 8, 8), classes=2, maps=3)


@pytest.fixture
def blobs_config_dict(tmp_path):
    """A two-class synthetic experiment small enough for unit tests."""
    return {
        "name": "blobs-test",
        "dataset": {"name": "blobs", "synthetic_train": 200, "synthetic_test": 100, "subsample_seed": 0},
        "network": "toy",
        "response_norm": False,
        "pooling": {"train_mode": "stochastic", "test_mode": "prob_weight", "window": 3, "stride": 2},
        "optimizer": {"momentum": 0.9, "weight_decay": 0.0, "lr_conv": 0.05, "lr_softmax": 0.1,
                      "batch_size": 20, "filter_std": 0.1},
        "epochs": 20,
        "seed": 0,
        "output_dir": str(tmp_path / "run"),
        "checkpoint_every": 5,
        "eval_batch_size": 50,
    }


@pytest.fixture
def blobs_config_file(tmp_path, blobs_config_dict):
    path = tmp_path / "blobs.json"
    path.write_text(json.dumps(blobs_config_dict))
    return path


@pytest.fixture(scope="session")
def mnist_dir():
    """Directory holding the official MNIST IDX files, or skip."""
    directory = os.environ.get("STOCHPOOL_MNIST_DIR")
    if not directory or not all((Path(directory) / name).is_file() for name in MNIST_FILES):
        pytest.skip("STOCHPOOL_MNIST_DIR does not point at the four MNIST IDX files")
    return Path(directory)
