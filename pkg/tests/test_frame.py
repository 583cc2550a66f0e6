import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from besteffort.errors import FrameError
from besteffort.frame import (
    HEADER_LEN,
    decode_frame,
    decode_subframes,
    encode_frame,
    encode_subframes,
)

from oracles import raw_frame

widths = st.integers(1, 16)


@st.composite
def frames(draw):
    cid = draw(st.integers(0, 0xFFFFFFFF))
    width = draw(widths)
    n = draw(st.integers(1, 20))
    payloads = [draw(st.binary(min_size=width, max_size=width)) for _ in range(n)]
    return cid, payloads


def test_layout_matches_hand_built_bytes():
    data = encode_frame(7, [struct.pack("<I", 3), struct.pack("<I", 4)])
    assert data == bytes.fromhex("07000000" "02000000" "04000000" "03000000" "04000000")


@given(frames())
def test_encode_matches_oracle_and_roundtrips(f):
    cid, payloads = f
    data = encode_frame(cid, payloads)
    assert data == raw_frame(cid, payloads)
    out = decode_frame(data)
    assert out.channel_id == cid
    assert out.payloads == payloads


@given(st.binary(max_size=64))
def test_fuzzed_decode_raises_only_frame_error(data):
    try:
        decode_frame(data)
    except FrameError:
        pass


def test_empty_frame_rejected():
    with pytest.raises(FrameError):
        encode_frame(1, [])


def test_mixed_widths_rejected():
    with pytest.raises(FrameError):
        encode_frame(1, [b"ab", b"abc"])


def test_zero_width_rejected():
    with pytest.raises(FrameError):
        encode_frame(1, [b""])
    # a zero width would let a tiny frame claim ~4 billion payloads
    with pytest.raises(FrameError):
        decode_frame(struct.pack("<III", 1, 0xFFFFFFFF, 0))


def test_channel_id_range():
    with pytest.raises(FrameError):
        encode_frame(2**32, [b"x"])


def test_short_header():
    with pytest.raises(FrameError) as exc:
        decode_frame(b"\x00" * 5)
    assert exc.value.offset == 5


def test_zero_count():
    with pytest.raises(FrameError):
        decode_frame(struct.pack("<III", 1, 0, 4))


@pytest.mark.parametrize("delta", [-1, 1])
def test_length_mismatch(delta):
    data = encode_frame(1, [b"abcd", b"efgh"])
    bad = data[:delta] if delta < 0 else data + b"\x00"
    with pytest.raises(FrameError):
        decode_frame(bad)


def test_header_len():
    assert HEADER_LEN == 12


@given(
    st.lists(
        st.tuples(st.integers(0, 1000), st.lists(st.binary(min_size=4, max_size=4), max_size=5)),
        max_size=8,
    )
)
def test_subframe_roundtrip(groups):
    region = encode_subframes(groups, 4)
    expect = [(m, list(p)) for m, p in groups if p]
    assert decode_subframes(region, 4) == expect


def test_truncated_subframe():
    region = encode_subframes([(0, [b"abcd", b"efgh"])], 4)
    with pytest.raises(FrameError):
        decode_subframes(region[:-1], 4)
    with pytest.raises(FrameError):
        decode_subframes(region + b"\x00", 4)
