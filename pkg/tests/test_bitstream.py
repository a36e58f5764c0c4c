import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpgd.functions.bitstream import (
    HEADER,
    StreamHeader,
    pack_header,
    read_header,
    rle0_decode,
    rle0_decode_from,
    rle0_encode,
    unpack_stream,
)
from cpgd.utils.errors import FormatError, TruncatedStreamError


def test_rle0_splits_long_zero_runs():
    assert rle0_encode([0] * 300) == bytes([0x00, 255, 0x00, 45])


def test_rle0_empty():
    assert rle0_encode([]) == b""
    assert rle0_decode(b"") == []


def test_rle0_mixed_hand_encoding():
    encoded = rle0_encode([0, 0, 5, -1, 0])
    assert encoded == bytes.fromhex("0002" "010200" "0500" "ffff" "0001")
    assert rle0_decode(encoded) == [0, 0, 5, -1, 0]


@settings(max_examples=100, deadline=None)
@given(
    st.one_of(
        st.lists(st.integers(-32768, 32767), max_size=600),
        st.lists(st.just(0), max_size=1000),
        st.lists(st.integers(1, 32767), max_size=300),
        st.lists(st.sampled_from([0, 0, 0, 1, -1, 32767, -32768]), max_size=800),
    )
)
def test_rle0_round_trip(values):
    assert rle0_decode(rle0_encode(values)) == values


def test_rle0_rejects_unknown_token():
    with pytest.raises(FormatError, match="unknown rle0 token 0x07") as e:
        rle0_decode(bytes([0x00, 3, 0x07]))
    assert e.value.offset == 2


def test_rle0_rejects_zero_length_run():
    with pytest.raises(FormatError, match="run length 0"):
        rle0_decode(bytes([0x00, 0]))


def test_rle0_decode_from_reports_frame_on_truncation():
    data = rle0_encode([4, 5, 6])[:-1]
    with pytest.raises(TruncatedStreamError) as e:
        rle0_decode_from(data, 0, 3, frame_index=2)
    assert e.value.frame_index == 2
    assert e.value.missing == 1


def test_rle0_decode_from_rejects_overflowing_run():
    with pytest.raises(FormatError, match="overflows"):
        rle0_decode_from(rle0_encode([0] * 10), 0, 5)


def header(**changes):
    fields = dict(
        width=32, height=32, block_size=16, search_radius=4, quant=1, rle=True, frame_count=1
    )
    fields.update(changes)
    return StreamHeader(**fields)


def test_header_layout_is_sixteen_bytes():
    packed = pack_header(header())
    assert HEADER.size == 16
    assert len(packed) == 16
    assert packed[:4] == b"CPV1"
    assert read_header(packed) == header()


def test_read_header_bad_magic_at_offset_zero():
    with pytest.raises(FormatError) as e:
        read_header(b"XXXX" + bytes(12))
    assert e.value.offset == 0


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"block_size": 4}, "block size"),
        ({"search_radius": 0}, "search radius"),
        ({"quant": 0}, "quantizer"),
        ({"width": 8}, "smaller than block size"),
        ({"frame_count": 0}, "no frames"),
    ],
)
def test_read_header_validation(changes, message):
    with pytest.raises(FormatError, match=message):
        read_header(pack_header(header(**changes)))


def test_read_header_unknown_flags():
    packed = bytearray(pack_header(header()))
    packed[11] = 0x80
    with pytest.raises(FormatError, match="flag"):
        read_header(bytes(packed))


def test_unpack_stream_truncated_intra():
    data = pack_header(header()) + bytes(100)
    with pytest.raises(TruncatedStreamError) as e:
        unpack_stream(data)
    assert e.value.frame_index == 0
    assert e.value.missing == 32 * 32 - 100
