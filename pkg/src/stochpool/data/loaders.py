"""
Readers for the MNIST IDX and CIFAR / SVHN binary record formats.

IDX (big-endian):
    u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels...   (images)
    u32 magic 0x00000801 | u32 count | u8 labels...                        (labels)

CIFAR binary: fixed-size records of label byte(s) followed by 3072 pixel
bytes, channel-planar R, G, B, each plane row-major 32x32. CIFAR-100
records carry a coarse then a fine label byte; the fine label is used.
"""

import logging
import struct
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from ..exceptions import DataFormatError
from .preprocessing import Dataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_PIXELS = 3 * 32 * 32


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e


def _idx_header(raw: bytes, path: PathLike, magic: int, dims: int) -> tuple:
    size = 4 * (1 + dims)
    if len(raw) < size:
        raise DataFormatError(f"{path}: truncated IDX header")
    found, *shape = struct.unpack(f">{1 + dims}I", raw[:size])
    if found != magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    return size, shape


def load_idx_images(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    offset, (count, rows, cols) = _idx_header(raw, path, IDX_IMAGE_MAGIC, 3)
    expected = count * rows * cols
    if len(raw) - offset < expected:
        raise DataFormatError(f"{path}: truncated, {len(raw) - offset} of {expected} pixel bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset)
    return pixels.reshape(count, 1, rows, cols)


def load_idx_labels(path: PathLike) -> np.ndarray:
    raw = _read_bytes(path)
    offset, (count,) = _idx_header(raw, path, IDX_LABEL_MAGIC, 1)
    if len(raw) - offset < count:
        raise DataFormatError(f"{path}: truncated, {len(raw) - offset} of {count} label bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)


def load_idx(image_path: PathLike, label_path: PathLike) -> Dataset:
    """Load an MNIST image/label file pair as raw 0-255 reals."""
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{image_path} has {images.shape[0]} images but {label_path} has {labels.shape[0]} labels"
        )
    logger.info(f"Loaded {images.shape[0]} IDX images from {image_path}")
    return Dataset(
        images=images.astype(np.float64),
        labels=labels.astype(np.int64),
        class_count=10,
        provenance=(f"source:idx:{Path(image_path).name}",),
    )


def load_cifar_binary(paths: Sequence[PathLike], classes: int = 10) -> Dataset:
    """Load and concatenate CIFAR-10 (classes=10) or CIFAR-100 (classes=100) batches."""
    if classes not in (10, 100):
        raise ValueError(f"CIFAR comes with 10 or 100 classes, got {classes}")
    label_bytes = 1 if classes == 10 else 2
    record = label_bytes + CIFAR_PIXELS

    images, labels = [], []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % record:
            raise DataFormatError(f"{path}: length {len(raw)} is not a multiple of record size {record}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(records[:, label_bytes - 1].astype(np.int64))
        images.append(records[:, label_bytes:].reshape(-1, 3, 32, 32))

    if not images:
        raise DataFormatError("no CIFAR batch files given")
    label_array = np.concatenate(labels)
    if label_array.max(initial=0) >= classes:
        raise DataFormatError(f"label {label_array.max()} out of range for {classes} classes")
    names = ",".join(Path(p).name for p in paths)
    logger.info(f"Loaded {label_array.shape[0]} CIFAR-{classes} records from {len(paths)} file(s)")
    return Dataset(
        images=np.concatenate(images).astype(np.float64),
        labels=label_array,
        class_count=classes,
        provenance=(f"source:cifar{classes}:{names}",),
    )


def load_svhn_binary(paths: Sequence[PathLike]) -> Dataset:
    """SVHN pre-converted to CIFAR-10 record layout (see convert_svhn)."""
    dataset = load_cifar_binary(paths, classes=10)
    names = ",".join(Path(p).name for p in paths)
    return Dataset(dataset.images, dataset.labels, 10, (f"source:svhn:{names}",))


def convert_svhn(npz_path: PathLike, out_path: PathLike) -> int:
    """
    Convert an SVHN array archive into CIFAR-10 style binary records.

    The archive must hold X shaped (32, 32, 3, N) uint8 and y shaped (N,)
    or (N, 1) with labels 1..10, where 10 stands for the digit 0.

    Returns:
        Number of records written
    """
    try:
        with np.load(npz_path) as archive:
            x, y = archive["X"], archive["y"]
    except (OSError, KeyError, ValueError) as e:
        raise DataFormatError(f"{npz_path}: not an SVHN archive with X and y arrays ({e})") from e

    if x.ndim != 4 or x.shape[:3] != (32, 32, 3):
        raise DataFormatError(f"{npz_path}: X must be (32, 32, 3, N), got {x.shape}")
    y = np.asarray(y).reshape(-1)
    if y.shape[0] != x.shape[3]:
        raise DataFormatError(f"{npz_path}: {x.shape[3]} images but {y.shape[0]} labels")
    if y.min(initial=1) < 1 or y.max(initial=1) > 10:
        raise DataFormatError(f"{npz_path}: labels must lie in 1..10")

    planar = np.transpose(x, (3, 2, 0, 1)).reshape(x.shape[3], CIFAR_PIXELS).astype(np.uint8)
    labels = (y % 10).astype(np.uint8)[:, None]
    records = np.concatenate([labels, planar], axis=1)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_bytes(records.tobytes())
    logger.info(f"Converted {records.shape[0]} SVHN images to {out_path}")
    return int(records.shape[0])
