from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any


@dataclass(frozen=True, slots=True)
class Message:
    """One sequence-numbered payload. ``seq`` starts at 1; 0 marks the default."""

    seq: int
    payload: Any


@dataclass(slots=True)
class Counters:
    """Per-channel traffic counters.

    Each field has a single writer: the ``puts_*`` fields are producer-owned,
    ``reads_*`` consumer-owned, ``recv_dropped`` belongs to the receive pump
    of an inter-process duct, and ``discarded`` to ``emplace_duct``.
    """

    puts_attempted: int = 0
    puts_dropped: int = 0
    reads_fresh: int = 0
    reads_stale: int = 0
    discarded: int = 0
    recv_dropped: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}
