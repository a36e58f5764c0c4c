"""
CPV1 container and the rle0 residual token codec.

All multi-byte integers are little-endian. Layout::

    "CPV1" u16 width u16 height u8 block_size u8 search_radius u8 quant u8 flags u32 frames
    frame 0:  width*height u8 samples
    frame t:  blocks_y*blocks_x pairs (i8 dy, i8 dx), then the residual section
              (raw i16 values, or rle0 tokens when flags bit 0 is set)

rle0 tokens: 0x00 <u8 run 1..255> emits zeros, 0x01 <u16 count> <count i16> emits raw values.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from cpgd.utils.errors import FormatError, TruncatedStreamError

MAGIC = b"CPV1"
HEADER = struct.Struct("<4sHHBBBBI")
FLAG_RLE = 0x01

ZERO_RUN = 0x00
RAW_RUN = 0x01
MAX_ZERO_RUN = 255
MAX_RAW_RUN = 65535


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    block_size: int
    search_radius: int
    quant: int
    rle: bool
    frame_count: int

    @property
    def blocks_x(self):
        return math.ceil(self.width / self.block_size)

    @property
    def blocks_y(self):
        return math.ceil(self.height / self.block_size)


def rle0_encode(values):
    """
    Encode i16 values as zero-run / raw-run tokens.

    :param values: Sequence of int16-range integers
    :return: Token bytes
    :rtype: bytes
    """
    values = np.asarray(values, dtype=np.int16).ravel()
    if values.size == 0:
        return b""
    nonzero = values != 0
    edges = np.flatnonzero(np.diff(nonzero.astype(np.int8))) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [values.size]))

    out = bytearray()
    for start, end in zip(starts.tolist(), ends.tolist()):
        if not nonzero[start]:
            full, rest = divmod(end - start, MAX_ZERO_RUN)
            out += bytes((ZERO_RUN, MAX_ZERO_RUN)) * full
            if rest:
                out += bytes((ZERO_RUN, rest))
            continue
        for chunk_start in range(start, end, MAX_RAW_RUN):
            chunk = values[chunk_start : min(end, chunk_start + MAX_RAW_RUN)]
            out += struct.pack("<BH", RAW_RUN, chunk.size)
            out += chunk.astype("<i2").tobytes()
    return bytes(out)


def rle0_decode_from(data, offset, count, frame_index=None):
    """
    Decode exactly ``count`` values starting at ``offset``.

    :return: (int16 array, offset just past the last token)
    :rtype: tuple
    """
    out = np.empty(count, dtype=np.int16)
    produced = 0
    size = len(data)
    while produced < count:
        if offset >= size:
            _truncated(frame_index, 1, offset)
        token = data[offset]
        if token == ZERO_RUN:
            if offset + 2 > size:
                _truncated(frame_index, offset + 2 - size, offset)
            run = data[offset + 1]
            if run == 0:
                raise FormatError("zero-run token with run length 0", offset)
            if produced + run > count:
                raise FormatError(
                    f"zero run of {run} overflows the {count} expected values", offset
                )
            out[produced : produced + run] = 0
            produced += run
            offset += 2
        elif token == RAW_RUN:
            if offset + 3 > size:
                _truncated(frame_index, offset + 3 - size, offset)
            (raw,) = struct.unpack_from("<H", data, offset + 1)
            if raw == 0:
                raise FormatError("raw-run token with count 0", offset)
            if produced + raw > count:
                raise FormatError(
                    f"raw run of {raw} overflows the {count} expected values", offset
                )
            start = offset + 3
            end = start + 2 * raw
            if end > size:
                _truncated(frame_index, end - size, offset)
            out[produced : produced + raw] = np.frombuffer(data, "<i2", raw, start)
            produced += raw
            offset = end
        else:
            raise FormatError(f"unknown rle0 token 0x{token:02x}", offset)
    return out, offset


def rle0_decode(data):
    """
    Decode a complete token stream.

    :param data: Token bytes
    :type data: bytes
    :return: Decoded values
    :rtype: list
    """
    values = []
    offset = 0
    while offset < len(data):
        run = _peek_run(data, offset)
        if run == 0:
            raise FormatError("token with run length 0", offset)
        chunk, offset = rle0_decode_from(data, offset, run)
        values.extend(int(v) for v in chunk)
    return values


def _peek_run(data, offset):
    token = data[offset]
    if token == ZERO_RUN:
        if offset + 2 > len(data):
            raise FormatError("incomplete zero-run token", offset)
        return data[offset + 1]
    if token == RAW_RUN:
        if offset + 3 > len(data):
            raise FormatError("incomplete raw-run token", offset)
        return struct.unpack_from("<H", data, offset + 1)[0]
    raise FormatError(f"unknown rle0 token 0x{token:02x}", offset)


def _truncated(frame_index, missing, offset):
    if frame_index is None:
        raise FormatError(f"token stream truncated, {missing} more byte(s) needed", offset)
    raise TruncatedStreamError(frame_index, missing, offset)


def pack_header(header):
    flags = FLAG_RLE if header.rle else 0
    return HEADER.pack(
        MAGIC,
        header.width,
        header.height,
        header.block_size,
        header.search_radius,
        header.quant,
        flags,
        header.frame_count,
    )


def read_header(data):
    """
    Parse and validate the fixed 16-byte header.

    :param data: Stream bytes
    :type data: bytes
    :return: Parsed header
    :rtype: StreamHeader
    """
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}", 0)
    if len(data) < HEADER.size:
        raise FormatError(
            f"header truncated, {HEADER.size - len(data)} more byte(s) needed", len(data)
        )
    _, width, height, block_size, radius, quant, flags, frames = HEADER.unpack_from(data)
    if block_size not in (8, 16):
        raise FormatError(f"unsupported block size {block_size}", 8)
    if not 1 <= radius <= 127:
        raise FormatError(f"search radius {radius} outside [1, 127]", 9)
    if quant < 1:
        raise FormatError("quantizer step 0", 10)
    if flags & ~FLAG_RLE:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", 11)
    if width < block_size or height < block_size:
        raise FormatError(f"frame {width}×{height} smaller than block size", 4)
    if frames < 1:
        raise FormatError("stream declares no frames", 12)
    return StreamHeader(width, height, block_size, radius, quant, bool(flags), frames)


def pack_stream(header, intra, motion, residuals):
    """
    Serialize an encoded clip.

    :param header: Stream header (frame_count must match the payloads)
    :type header: StreamHeader
    :param intra: height×width uint8 samples of frame 0
    :param motion: blocks_y×blocks_x×2 vector arrays for frames 1..T-1
    :param residuals: height×width int16 arrays for frames 1..T-1
    :return: CPV1 bytes
    :rtype: bytes
    """
    out = bytearray(pack_header(header))
    out += np.ascontiguousarray(intra, dtype=np.uint8).tobytes()
    for vectors, values in zip(motion, residuals):
        out += np.ascontiguousarray(vectors, dtype=np.int8).tobytes()
        if header.rle:
            out += rle0_encode(values)
        else:
            out += np.ascontiguousarray(values, dtype="<i2").tobytes()
    return bytes(out)


def unpack_stream(data):
    """
    Parse a CPV1 stream into raw arrays.

    :param data: CPV1 bytes
    :type data: bytes
    :return: (header, intra samples, list of vector arrays, list of residual arrays)
    :rtype: tuple
    """
    header = read_header(data)
    size = len(data)
    pixels = header.width * header.height
    offset = HEADER.size

    if offset + pixels > size:
        raise TruncatedStreamError(0, offset + pixels - size, size)
    intra = np.frombuffer(data, np.uint8, pixels, offset).reshape(
        header.height, header.width
    )
    offset += pixels

    mv_bytes = header.blocks_x * header.blocks_y * 2
    motion = []
    residuals = []
    for index in range(1, header.frame_count):
        if offset + mv_bytes > size:
            raise TruncatedStreamError(index, offset + mv_bytes - size, size)
        vectors = np.frombuffer(data, np.int8, mv_bytes, offset)
        outside = np.flatnonzero(np.abs(vectors.astype(np.int16)) > header.search_radius)
        if outside.size:
            raise FormatError(
                f"frame {index}: vector component {int(vectors[outside[0]])} "
                f"exceeds search radius {header.search_radius}",
                offset + int(outside[0]),
            )
        motion.append(vectors.reshape(header.blocks_y, header.blocks_x, 2))
        offset += mv_bytes

        if header.rle:
            values, offset = rle0_decode_from(data, offset, pixels, index)
        else:
            if offset + 2 * pixels > size:
                raise TruncatedStreamError(index, offset + 2 * pixels - size, size)
            values = np.frombuffer(data, "<i2", pixels, offset).astype(np.int16)
            offset += 2 * pixels
        residuals.append(values.reshape(header.height, header.width))

    if offset != size:
        raise FormatError(f"{size - offset} trailing byte(s) after last frame", offset)
    return header, intra, motion, residuals
