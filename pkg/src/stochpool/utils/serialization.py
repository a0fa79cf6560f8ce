"""
Binary formats and checkpoint directories.

SP4T tensor file:
    b"SP4T" | 4 x u32 LE dims (n, c, h, w) | n*c*h*w x f64 LE, row-major

SPSW switch map file:
    b"SPSW" | 9 x u32 LE (kh, kw, stride, h, w, n, c, oh, ow) | n*c*oh*ow x i32 LE
    Each value is a flat index row*w + col into the input plane, -1 for NONE.

Checkpoint directory:
    manifest.txt           key=value lines (spec_hash, epoch, seed, rng_position, ...)
    network.json           the NetworkSpec
    config.json            the ExperimentConfig, when the run had one
    param_<name>.sp4t      one file per parameter
    velocity_<name>.sp4t   optimizer velocities for exact resume
    mean_image.sp4t        training mean image, when mean subtraction ran
    preprocessing.txt      provenance of the training set, one step per line
"""

import json
import logging
import shutil
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..exceptions import ConsistencyError, DataFormatError, DimensionError
from ..models.network_spec import NetworkSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

TENSOR_MAGIC = b"SP4T"
SWITCH_MAGIC = b"SPSW"
CHECKPOINT_FORMAT = "stochpool-checkpoint-1"


def _padded_shape(shape: Tuple[int, ...]) -> Tuple[int, int, int, int]:
    if len(shape) > 4:
        raise DimensionError(f"SP4T holds at most 4 dimensions, got shape {shape}")
    return (1,) * (4 - len(shape)) + tuple(int(d) for d in shape)


def encode_tensor(array: np.ndarray) -> bytes:
    """Arrays of rank below 4 are stored with leading unit dimensions."""
    array = np.asarray(array)
    header = TENSOR_MAGIC + struct.pack("<4I", *_padded_shape(array.shape))
    return header + np.ascontiguousarray(array, dtype="<f8").tobytes()


def decode_tensor(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 20 or raw[:4] != TENSOR_MAGIC:
        raise DataFormatError(f"{source}: not an SP4T tensor")
    dims = struct.unpack("<4I", raw[4:20])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) != 20 + 8 * count:
        raise DataFormatError(f"{source}: expected {count} values for shape {dims}, "
                              f"got {(len(raw) - 20) / 8:g}")
    return np.frombuffer(raw, dtype="<f8", offset=20).astype(np.float64).reshape(dims)


def write_tensor(path: PathLike, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(array))
    return path


def read_tensor(path: PathLike, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    """Read an SP4T file, optionally reshaping to the original lower-rank shape."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    tensor = decode_tensor(raw, str(path))
    if shape is not None:
        if _padded_shape(tuple(shape)) != tensor.shape:
            raise DimensionError(f"{path}: stored shape {tensor.shape} does not hold {tuple(shape)}")
        tensor = tensor.reshape(shape)
    return tensor


def write_switches(path: PathLike, switches) -> Path:
    """Serialize a pooling SwitchMap."""
    geometry = switches.geometry
    n, c, oh, ow = switches.indices.shape
    header = SWITCH_MAGIC + struct.pack(
        "<9I", geometry.window[0], geometry.window[1], geometry.stride,
        geometry.input_shape[0], geometry.input_shape[1], n, c, oh, ow,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(switches.indices, dtype="<i4").tobytes())
    return path


def read_switches(path: PathLike):
    """Load a SwitchMap and check every index against its region."""
    from ..core.kernels.pooling import PoolingGeometry, SwitchMap

    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if len(raw) < 40 or raw[:4] != SWITCH_MAGIC:
        raise DataFormatError(f"{path}: not an SPSW switch map")
    kh, kw, stride, h, w, n, c, oh, ow = struct.unpack("<9I", raw[4:40])
    count = n * c * oh * ow
    if len(raw) != 40 + 4 * count:
        raise DataFormatError(f"{path}: expected {count} switch entries")
    geometry = PoolingGeometry((kh, kw), stride, (h, w))
    if geometry.output_shape != (oh, ow):
        raise ConsistencyError(f"{path}: grid {(oh, ow)} does not match geometry {geometry.output_shape}")
    indices = np.frombuffer(raw, dtype="<i4", offset=40).astype(np.int64).reshape(n, c, oh, ow)
    return SwitchMap(indices, geometry).validate()


def write_netpbm(path: PathLike, image: np.ndarray) -> Path:
    """Write a uint8 image shaped (1, h, w) as binary PGM or (3, h, w) as PPM."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DimensionError(f"netpbm images must be uint8 (1|3, h, w), got {image.dtype} {image.shape}")
    c, h, w = image.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(image.transpose(1, 2, 0)).tobytes())
    return path


def read_netpbm(path: PathLike) -> np.ndarray:
    """Read a binary PGM/PPM (maxval 255) into a uint8 (c, h, w) array."""
    raw = Path(path).read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError(f"{path}: truncated netpbm header")
        tokens.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DataFormatError(f"{path}: only binary 8-bit PGM/PPM is supported")
    c = 1 if magic == b"P5" else 3
    if len(raw) - pos < c * h * w:
        raise DataFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=c * h * w, offset=pos)
    return pixels.reshape(h, w, c).transpose(2, 0, 1).copy()


@dataclass
class Checkpoint:
    """A restorable training state."""

    spec: NetworkSpec
    params: Dict[str, np.ndarray]
    epoch: int
    seed: int
    velocities: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    hyper: Dict[str, str] = field(default_factory=dict)
    config: Optional[dict] = None
    mean_image: Optional[np.ndarray] = None
    preprocessing: Tuple[str, ...] = ()

    @property
    def spec_hash(self) -> str:
        return self.spec.spec_hash()


def _write_manifest(path: Path, entries: Dict[str, str]) -> None:
    lines = [f"{key}={value}" for key, value in entries.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: PathLike) -> Dict[str, str]:
    entries: Dict[str, str] = OrderedDict()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}: malformed manifest line {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def save_checkpoint(directory: PathLike, checkpoint: Checkpoint) -> Path:
    """
    Write a checkpoint directory.

    The directory is assembled under a temporary name and renamed into
    place, so an interrupted write never leaves a half-written checkpoint.
    """
    directory = Path(directory)
    staging = directory.with_name(directory.name + ".tmp")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)

    manifest = OrderedDict([
        ("format", CHECKPOINT_FORMAT),
        ("spec_hash", checkpoint.spec_hash),
        ("epoch", str(checkpoint.epoch)),
        ("seed", str(checkpoint.seed)),
        ("rng_position", f"shuffle:{checkpoint.epoch},pool:{checkpoint.epoch}:0"),
        ("parameters", ",".join(checkpoint.params)),
    ])
    manifest.update(checkpoint.hyper)

    (staging / "network.json").write_text(
        json.dumps(checkpoint.spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for name, value in checkpoint.params.items():
        write_tensor(staging / f"param_{name}.sp4t", value)
    for name, value in checkpoint.velocities.items():
        write_tensor(staging / f"velocity_{name}.sp4t", value)
    if checkpoint.config is not None:
        (staging / "config.json").write_text(
            json.dumps(checkpoint.config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if checkpoint.mean_image is not None:
        write_tensor(staging / "mean_image.sp4t", checkpoint.mean_image)
    if checkpoint.preprocessing:
        (staging / "preprocessing.txt").write_text("\n".join(checkpoint.preprocessing) + "\n",
                                                   encoding="utf-8")
    _write_manifest(staging / "manifest.txt", manifest)

    if directory.exists():
        shutil.rmtree(directory)
    staging.rename(directory)
    logger.debug(f"Saved checkpoint for epoch {checkpoint.epoch} to {directory}")
    return directory


def load_checkpoint(directory: PathLike) -> Checkpoint:
    """
    Raises:
        DataFormatError: missing or malformed files
        ConsistencyError: the stored network does not match the manifest hash
    """
    directory = Path(directory)
    if not (directory / "manifest.txt").is_file():
        raise DataFormatError(f"{directory} is not a checkpoint directory (no manifest.txt)")
    manifest = read_manifest(directory / "manifest.txt")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"{directory}: unsupported checkpoint format {manifest.get('format')!r}")
    spec = NetworkSpec.from_dict(json.loads((directory / "network.json").read_text(encoding="utf-8")))
    if spec.spec_hash() != manifest.get("spec_hash"):
        raise ConsistencyError(f"{directory}: network.json does not match the manifest spec hash")

    from ..core.kernels.network import param_shapes

    shapes = param_shapes(spec)
    params: Dict[str, np.ndarray] = OrderedDict()
    velocities: Dict[str, np.ndarray] = OrderedDict()
    for name, shape in shapes.items():
        params[name] = read_tensor(directory / f"param_{name}.sp4t", shape)
        velocity_path = directory / f"velocity_{name}.sp4t"
        if velocity_path.exists():
            velocities[name] = read_tensor(velocity_path, shape)

    config = None
    if (directory / "config.json").exists():
        config = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    mean_image = None
    if (directory / "mean_image.sp4t").exists():
        mean_image = read_tensor(directory / "mean_image.sp4t")
    preprocessing: Tuple[str, ...] = ()
    if (directory / "preprocessing.txt").exists():
        preprocessing = tuple((directory / "preprocessing.txt").read_text(encoding="utf-8").splitlines())

    reserved = {"format", "spec_hash", "epoch", "seed", "rng_position", "parameters"}
    return Checkpoint(
        spec=spec,
        params=params,
        epoch=int(manifest["epoch"]),
        seed=int(manifest["seed"]),
        velocities=velocities,
        hyper={k: v for k, v in manifest.items() if k not in reserved},
        config=config,
        mean_image=mean_image,
        preprocessing=preprocessing,
    )
