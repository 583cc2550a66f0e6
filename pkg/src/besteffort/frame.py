"""Bit-exact wire layout for transport frames.

A frame is a 12-byte little-endian header followed by a packed payload
region::

    channel_id   u32
    msg_count    u32   (>= 1)
    payload_len  u32   (bytes per message, >= 1)
    payloads     msg_count * payload_len bytes

Aggregated frames carry a single payload whose bytes are a sequence of
sub-frames ``(member_index u32, count u32, count * width bytes)``.
Stream transports additionally prefix each frame with its u32 length.
"""

from __future__ import annotations

import struct
from typing import NamedTuple, Sequence

from .errors import FrameError

HEADER = struct.Struct("<III")
HEADER_LEN = HEADER.size
LENGTH_PREFIX = struct.Struct("<I")
SUBFRAME_HEADER = struct.Struct("<II")

U32_MAX = 0xFFFFFFFF


class Frame(NamedTuple):
    channel_id: int
    payloads: list[bytes]


def encode_frame(channel_id: int, payloads: Sequence[bytes]) -> bytes:
    """Pack ``payloads`` (all the same width) behind a frame header."""
    if not 0 <= channel_id <= U32_MAX:
        raise FrameError(f"channel_id {channel_id} does not fit in u32")
    if len(payloads) == 0:
        raise FrameError("a frame must carry at least one payload")
    width = len(payloads[0])
    if width == 0:
        raise FrameError("payloads must be at least one byte wide")
    for i, p in enumerate(payloads):
        if len(p) != width:
            raise FrameError(
                f"payload {i} is {len(p)} bytes, expected {width}",
                offset=HEADER_LEN + i * width,
            )
    if len(payloads) > U32_MAX or width > U32_MAX:
        raise FrameError("frame too large for u32 header fields")
    return HEADER.pack(channel_id, len(payloads), width) + b"".join(payloads)


def decode_frame(data: bytes | bytearray | memoryview) -> Frame:
    """Inverse of :func:`encode_frame`; rejects truncated or padded input."""
    data = bytes(data)
    if len(data) < HEADER_LEN:
        raise FrameError(
            f"header incomplete: {len(data)} of {HEADER_LEN} bytes", offset=len(data)
        )
    channel_id, count, width = HEADER.unpack_from(data, 0)
    if count == 0:
        raise FrameError("msg_count is zero", offset=4)
    if width == 0:
        # otherwise a 12-byte frame could claim billions of empty payloads
        raise FrameError("payload_len is zero", offset=8)
    expected = HEADER_LEN + count * width
    if len(data) != expected:
        raise FrameError(
            f"length mismatch: header implies {expected} bytes, got {len(data)}",
            offset=min(len(data), expected),
        )
    payloads = [
        data[HEADER_LEN + i * width : HEADER_LEN + (i + 1) * width] for i in range(count)
    ]
    return Frame(channel_id, payloads)


def encode_subframes(groups: Sequence[tuple[int, Sequence[bytes]]], width: int) -> bytes:
    """Pack ``(member_index, payloads)`` groups into one aggregation region.

    Groups with no payloads are skipped.
    """
    parts = []
    for member, payloads in groups:
        if not payloads:
            continue
        for p in payloads:
            if len(p) != width:
                raise FrameError(f"payload for member {member} is {len(p)} bytes, expected {width}")
        parts.append(SUBFRAME_HEADER.pack(member, len(payloads)))
        parts.extend(payloads)
    return b"".join(parts)


def decode_subframes(region: bytes, width: int) -> list[tuple[int, list[bytes]]]:
    out = []
    pos = 0
    n = len(region)
    while pos < n:
        if n - pos < SUBFRAME_HEADER.size:
            raise FrameError("sub-frame header incomplete", offset=pos)
        member, count = SUBFRAME_HEADER.unpack_from(region, pos)
        pos += SUBFRAME_HEADER.size
        end = pos + count * width
        if end > n:
            raise FrameError(f"sub-frame for member {member} truncated", offset=n)
        out.append((member, [region[pos + i * width : pos + (i + 1) * width] for i in range(count)]))
        pos = end
    return out
