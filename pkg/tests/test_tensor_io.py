"""CSCT binary format and archive round trips."""

import struct

import numpy as np
import pytest

from cscseg import tensor_io
from cscseg.errors import FormatError
from cscseg.rng import Stream


def test_tensor_round_trip_f64(tmp_path, stream):
    arr = stream.normal((2, 3, 4, 5))
    path = tmp_path / "t.csct"
    tensor_io.write_tensor(path, arr)
    back = tensor_io.read_tensor(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, arr)


def test_tensor_round_trip_f32(tmp_path, stream):
    arr = stream.normal((7,)).astype(np.float32)
    path = tmp_path / "t.csct"
    tensor_io.write_tensor(path, arr)
    back = tensor_io.read_tensor(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_header_layout():
    blob = tensor_io.tensor_bytes(np.zeros((2, 3), dtype=np.float32))
    assert blob[:4] == b"CSCT"
    version, dtype_code, ndim = struct.unpack("<BBB", blob[4:7])
    assert (version, dtype_code, ndim) == (1, 0, 2)
    assert struct.unpack("<2Q", blob[7:23]) == (2, 3)
    assert len(blob) == 23 + 6 * 4


def test_truncated_raises_with_offset(tmp_path, stream):
    arr = stream.normal((4, 4))
    path = tmp_path / "t.csct"
    tensor_io.write_tensor(path, arr)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(FormatError) as err:
        tensor_io.read_tensor(path)
    assert err.value.offset is not None


def test_bad_magic(tmp_path):
    path = tmp_path / "t.csct"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        tensor_io.read_tensor(path)


def test_archive_round_trip(tmp_path, stream):
    tensors = {
        "enc.w": stream.normal((2, 1, 3, 3)),
        "head.bias": stream.normal((5,)).astype(np.float32),
    }
    config = {"widths": [1, 2, 3], "dtype": "f64"}
    path = tmp_path / "model.csct"
    tensor_io.write_archive(path, config, tensors)
    config2, tensors2 = tensor_io.read_archive(path)
    assert config2 == config
    assert set(tensors2) == set(tensors)
    for name in tensors:
        assert tensors2[name].dtype == tensors[name].dtype
        assert np.array_equal(tensors2[name], tensors[name])
