"""
Tests for tensor, switch map, image and checkpoint files.
"""

import struct

import numpy as np
import pytest

from stochpool.core.kernels.network import init_params
from stochpool.core.kernels.pooling import PoolingGeometry, SwitchMap, sample_switches
from stochpool.exceptions import ConsistencyError, DataFormatError, DimensionError
from stochpool.utils.serialization import (
    Checkpoint,
    decode_tensor,
    encode_tensor,
    load_checkpoint,
    read_manifest,
    read_netpbm,
    read_switches,
    read_tensor,
    save_checkpoint,
    write_netpbm,
    write_switches,
    write_tensor,
)


class TestTensorFile:
    """Test the SP4T format."""

    def test_layout(self):
        raw = encode_tensor(np.arange(6, dtype=np.float64).reshape(1, 2, 1, 3))
        assert raw[:4] == b"SP4T"
        assert struct.unpack("<4I", raw[4:20]) == (1, 2, 1, 3)
        assert struct.unpack("<6d", raw[20:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)

    def test_file_keeps_values_exactly(self, tmp_path, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_array_equal(read_tensor(write_tensor(tmp_path / "x.sp4t", x)), x)

    def test_lower_rank_padded(self, tmp_path):
        path = write_tensor(tmp_path / "b.sp4t", np.array([1.0, 2.0, 3.0]))
        assert read_tensor(path).shape == (1, 1, 1, 3)
        assert read_tensor(path, (3,)).shape == (3,)
        with pytest.raises(DimensionError):
            read_tensor(path, (4,))

    def test_bad_magic(self):
        with pytest.raises(DataFormatError):
            decode_tensor(b"XXXX" + bytes(16))

    def test_truncated(self):
        with pytest.raises(DataFormatError):
            decode_tensor(encode_tensor(np.ones((1, 1, 2, 2)))[:-8])

    def test_rank_five_rejected(self):
        with pytest.raises(DimensionError):
            encode_tensor(np.zeros((1, 1, 1, 1, 1)))


class TestSwitchFile:
    """Test the SPSW format."""

    def test_reload(self, tmp_path, rng):
        geometry = PoolingGeometry((3, 3), 2, (8, 8))
        x = np.abs(rng.standard_normal((2, 3, 8, 8)))
        x[0, 0] = 0.0
        switches = sample_switches(x, geometry, np.random.default_rng(0))
        loaded = read_switches(write_switches(tmp_path / "s.spsw", switches))
        assert loaded.geometry == geometry
        np.testing.assert_array_equal(loaded.indices, switches.indices)
        assert np.all(loaded.indices[0, 0] == -1)

    def test_corrupted_index(self, tmp_path):
        geometry = PoolingGeometry((2, 2), 2, (4, 4))
        indices = np.array([[[[0, 2], [8, 10]]]])
        path = write_switches(tmp_path / "s.spsw", SwitchMap(indices, geometry))
        raw = bytearray(path.read_bytes())
        raw[40:44] = struct.pack("<i", 15)
        path.write_bytes(bytes(raw))
        with pytest.raises(ConsistencyError):
            read_switches(path)

    def test_not_a_switch_file(self, tmp_path):
        (tmp_path / "x").write_bytes(b"SP4T" + bytes(40))
        with pytest.raises(DataFormatError):
            read_switches(tmp_path / "x")


class TestNetpbm:
    """Test PGM/PPM output."""

    def test_pgm(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(1, 5, 7), dtype=np.uint8)
        path = write_netpbm(tmp_path / "a.pgm", image)
        assert path.read_bytes().startswith(b"P5\n7 5\n255\n")
        np.testing.assert_array_equal(read_netpbm(path), image)

    def test_ppm(self, tmp_path, rng):
        image = rng.integers(0, 256, size=(3, 4, 6), dtype=np.uint8)
        path = write_netpbm(tmp_path / "a.ppm", image)
        raw = path.read_bytes()
        header = len(b"P6\n6 4\n255\n")
        # interleaved RGB
        assert raw[header:header + 3] == bytes(image[:, 0, 0])
        np.testing.assert_array_equal(read_netpbm(path), image)

    def test_comment_in_header(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
        np.testing.assert_array_equal(read_netpbm(tmp_path / "c.pgm"), [[[7, 9]]])

    def test_rejects_float_image(self, tmp_path):
        with pytest.raises(DimensionError):
            write_netpbm(tmp_path / "a.pgm", np.zeros((1, 2, 2)))


class TestCheckpoint:
    """Test checkpoint directories."""

    @pytest.fixture
    def checkpoint(self, toy_spec):
        params = init_params(toy_spec, np.random.default_rng(0), filter_std=0.1)
        velocities = {k: np.full_like(v, 0.25) for k, v in params.items()}
        return Checkpoint(spec=toy_spec, params=params, epoch=3, seed=11, velocities=velocities,
                          hyper={"momentum": "0.9", "lr_conv": "0.01"}, config={"name": "toy"},
                          mean_image=np.ones((1, 1, 8, 8)), preprocessing=("source:blobs", "lcn:radius=4"))

    def test_reload(self, tmp_path, checkpoint):
        directory = save_checkpoint(tmp_path / "epoch-0003", checkpoint)
        loaded = load_checkpoint(directory)
        assert loaded.spec == checkpoint.spec
        assert loaded.epoch == 3 and loaded.seed == 11
        assert list(loaded.params) == list(checkpoint.params)
        for name in checkpoint.params:
            np.testing.assert_array_equal(loaded.params[name], checkpoint.params[name])
            np.testing.assert_array_equal(loaded.velocities[name], checkpoint.velocities[name])
        assert loaded.hyper == {"momentum": "0.9", "lr_conv": "0.01"}
        assert loaded.config == {"name": "toy"}
        assert loaded.preprocessing == ("source:blobs", "lcn:radius=4")
        np.testing.assert_array_equal(loaded.mean_image, np.ones((1, 1, 8, 8)))

    def test_manifest(self, tmp_path, checkpoint):
        directory = save_checkpoint(tmp_path / "ckpt", checkpoint)
        manifest = read_manifest(directory / "manifest.txt")
        assert manifest["spec_hash"] == checkpoint.spec.spec_hash()
        assert manifest["rng_position"] == "shuffle:3,pool:3:0"
        assert not (tmp_path / "ckpt.tmp").exists()

    def test_overwrite(self, tmp_path, checkpoint):
        save_checkpoint(tmp_path / "ckpt", checkpoint)
        checkpoint.epoch = 4
        assert load_checkpoint(save_checkpoint(tmp_path / "ckpt", checkpoint)).epoch == 4

    def test_hash_mismatch(self, tmp_path, checkpoint):
        directory = save_checkpoint(tmp_path / "ckpt", checkpoint)
        manifest = (directory / "manifest.txt").read_text()
        (directory / "manifest.txt").write_text(manifest.replace(checkpoint.spec.spec_hash(), "0" * 64))
        with pytest.raises(ConsistencyError):
            load_checkpoint(directory)

    def test_not_a_checkpoint(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path)
