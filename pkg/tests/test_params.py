import os
import struct

import numpy as np
import pytest

from cpgd.functions.params import load_params, pack_params, save_params, unpack_params
from cpgd.utils.errors import FormatError


def sample_layers():
    return {
        "conv.weight": np.arange(24, dtype=np.float32).reshape(2, 3, 2, 2),
        "conv.bias": np.array([0.5, -0.25], np.float32),
        "scalar": np.array([3.0], np.float32),
    }


def test_params_file_round_trip(temp_dir):
    path = os.path.join(temp_dir, "weights.bin")
    save_params(path, b"TEST", 42, sample_layers())
    seed, layers = load_params(path, b"TEST")
    assert seed == 42
    assert list(layers) == ["conv.weight", "conv.bias", "scalar"]
    for name, array in sample_layers().items():
        np.testing.assert_array_equal(layers[name], array)
        assert layers[name].dtype == np.float32


def test_params_preamble_layout():
    data = pack_params(b"TEST", 7, {})
    assert data == b"TEST" + struct.pack("<IQ", 1, 7)


def test_params_wrong_magic():
    with pytest.raises(FormatError, match="bad magic") as e:
        unpack_params(pack_params(b"TEST", 0, sample_layers()), b"CPFP")
    assert e.value.offset == 0


def test_params_unsupported_version():
    data = bytearray(pack_params(b"TEST", 0, {}))
    data[4] = 9
    with pytest.raises(FormatError, match="version 9"):
        unpack_params(bytes(data), b"TEST")


def test_params_truncated_payload():
    data = pack_params(b"TEST", 0, sample_layers())
    with pytest.raises(FormatError, match="scalar"):
        unpack_params(data[:-2], b"TEST")


def test_params_too_short():
    with pytest.raises(FormatError, match="too short"):
        unpack_params(b"TES", b"TEST")
