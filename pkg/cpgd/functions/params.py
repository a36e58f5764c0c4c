"""
Binary parameter files shared by the alignment ("CPFP") and attention ("CPCA") weights.

Layout (little-endian)::

    magic[4] u32 version u64 seed
    repeated until end of file:
        u16 name_length, name (utf-8), u32 rank, rank × u32 dims, f32 payload

Entries are float32 layers. CPCA files add one metadata entry, ``attn.heads``, a
rank-1 array holding the attention head count; the loader removes it from the layers.
"""

import struct

import numpy as np

from cpgd.utils.errors import FormatError

VERSION = 1
PREAMBLE = struct.Struct("<4sIQ")


def init_uniform(rng, shape, fan_in):
    """
    Uniform(-s, s) with s = 1/sqrt(fan_in).

    :param rng: Seeded generator
    :type rng: numpy.random.Generator
    :param shape: Output shape
    :type shape: tuple
    :param fan_in: Number of inputs feeding one output
    :type fan_in: int
    :rtype: numpy.ndarray
    """
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def pack_params(magic, seed, layers):
    """
    :param magic: 4-byte file identifier
    :type magic: bytes
    :param seed: Seed the layers were initialized with
    :type seed: int
    :param layers: Ordered mapping of layer name to array
    :type layers: dict
    :rtype: bytes
    """
    out = bytearray(PREAMBLE.pack(magic, VERSION, seed))
    for name, array in layers.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array, dtype="<f4")
        out += struct.pack("<H", len(encoded)) + encoded
        out += struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
        out += array.tobytes()
    return bytes(out)


def unpack_params(data, magic):
    """
    :param data: File contents
    :type data: bytes
    :param magic: Expected 4-byte identifier
    :type magic: bytes
    :return: (seed, layers dict of float32 arrays)
    :rtype: tuple
    """
    if len(data) < PREAMBLE.size:
        raise FormatError(
            f"parameter file too short ({len(data)} bytes) for its preamble", 0
        )
    found, version, seed = PREAMBLE.unpack_from(data)
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported parameter file version {version}", 4)

    layers = {}
    offset = PREAMBLE.size
    size = len(data)
    while offset < size:
        start = offset
        if offset + 2 > size:
            raise FormatError("truncated layer name length", offset)
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + name_len + 4 > size:
            raise FormatError("truncated layer header", start)
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if offset + 4 * rank > size:
            raise FormatError(f"truncated dims of layer {name!r}", start)
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        count = int(np.prod(dims, dtype=np.int64))
        if offset + 4 * count > size:
            raise FormatError(
                f"layer {name!r} needs {4 * count} payload bytes, {size - offset} left",
                offset,
            )
        array = np.frombuffer(data, "<f4", count, offset).reshape(dims)
        layers[name] = array.astype(np.float32)
        offset += 4 * count
    return seed, layers


def save_params(path, magic, seed, layers):
    with open(path, "wb") as f:
        f.write(pack_params(magic, seed, layers))


def load_params(path, magic):
    with open(path, "rb") as f:
        return unpack_params(f.read(), magic)
