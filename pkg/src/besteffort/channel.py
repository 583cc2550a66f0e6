"""Inlet/Outlet pairs with best-effort delivery semantics.

A :class:`Channel` joins one :class:`Inlet` (send side) to one
:class:`Outlet` (receive side) through a swappable duct. Messages may be
lost in exactly three places: ``try_put`` on a full buffer (the new message
is dropped), ``jump`` skipping over a backlog, and ``emplace_duct``
discarding whatever the old duct still held. ``put`` and ``step`` never
lose messages.

The outlet always has something to return: until the first message is
consumed it serves the ``default`` given at construction, and afterwards
the most recently consumed payload.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Mapping

from .ducts import DEFAULT_CAPACITY, BackendKind, Duct, make_duct
from .errors import ChannelClosed
from .message import Counters, Message

_SEQ_LIMIT = 2**63


class PutOutcome(enum.Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"


@dataclass(frozen=True, slots=True)
class ReadResult:
    payload: Any
    fresh: bool
    skipped: int = 0


class Inlet:
    """Send endpoint. Only one thread may send through an inlet."""

    __slots__ = ("_channel", "_seq")

    def __init__(self, channel: Channel) -> None:
        self._channel = channel
        self._seq = 0

    @property
    def channel(self) -> Channel:
        return self._channel

    def _next(self, payload: Any) -> Message:
        assert self._seq < _SEQ_LIMIT, "sequence numbers exhausted"
        return Message(self._seq + 1, payload)

    def try_put(self, payload: Any) -> PutOutcome:
        """Queue ``payload`` if there is room, otherwise drop it. Never blocks."""
        ch = self._channel
        ch.counters.puts_attempted += 1
        if ch.duct.push_nowait(self._next(payload)):
            self._seq += 1
            return PutOutcome.ACCEPTED
        ch.counters.puts_dropped += 1
        return PutOutcome.DROPPED

    def put(self, payload: Any, timeout: float | None = None) -> None:
        """Queue ``payload``, blocking while the buffer is full.

        Raises:
            ChannelClosed: the channel was closed, including while blocked.
            ChannelTimeout: ``timeout`` elapsed before space appeared.
        """
        ch = self._channel
        ch.counters.puts_attempted += 1
        ch.duct.push(self._next(payload), timeout)
        self._seq += 1


class Outlet:
    """Receive endpoint. Only one thread may read from an outlet."""

    __slots__ = ("_channel", "_last")

    def __init__(self, channel: Channel, default: Any) -> None:
        self._channel = channel
        self._last = Message(0, default)

    @property
    def channel(self) -> Channel:
        return self._channel

    @property
    def last(self) -> Message:
        """The most recently consumed message (seq 0 for the default)."""
        return self._last

    def try_step(self) -> ReadResult:
        """Consume the oldest unread message, or re-serve the cached one."""
        ch = self._channel
        msg = ch.duct.pop_nowait()
        if msg is None:
            ch.counters.reads_stale += 1
            return ReadResult(self._last.payload, False, 0)
        self._last = msg
        ch.counters.reads_fresh += 1
        return ReadResult(msg.payload, True, 0)

    def jump(self) -> ReadResult:
        """Consume the whole backlog and return only its newest message."""
        ch = self._channel
        backlog = ch.duct.drain()
        if not backlog:
            ch.counters.reads_stale += 1
            return ReadResult(self._last.payload, False, 0)
        self._last = backlog[-1]
        ch.counters.reads_fresh += 1
        return ReadResult(self._last.payload, True, len(backlog) - 1)

    def step(self, timeout: float | None = None) -> Any:
        """Block until a message is available, consume it and return its payload."""
        ch = self._channel
        msg = ch.duct.pop(timeout)
        self._last = msg
        ch.counters.reads_fresh += 1
        return msg.payload

    def peek(self) -> Any:
        """Cached payload without touching the duct or the counters."""
        return self._last.payload


class Channel:
    """A single-producer single-consumer best-effort channel.

    Args:
        default: payload served by the outlet before any message arrives.
        capacity: maximum number of unread messages held by the duct.
        backend: initial duct kind.
        config: backend parameters (see :func:`~besteffort.ducts.make_duct`).
        duct: prebuilt duct; overrides ``backend``/``config``.
    """

    def __init__(
        self,
        default: Any = None,
        capacity: int = DEFAULT_CAPACITY,
        backend: BackendKind | str = BackendKind.INTRA_THREAD,
        config: Mapping[str, Any] | None = None,
        *,
        duct: Duct | None = None,
    ) -> None:
        self.capacity = capacity
        self.counters = Counters()
        self.duct = duct if duct is not None else make_duct(backend, capacity, config)
        self.duct.attach(self.counters)
        self.inlet = Inlet(self)
        self.outlet = Outlet(self, default)

    @property
    def kind(self) -> BackendKind:
        return self.duct.kind

    @property
    def buffered(self) -> int:
        return len(self.duct)

    @property
    def closed(self) -> bool:
        return self.duct.closed

    def close(self) -> None:
        """Close the duct; blocked ``put``/``step`` callers raise ChannelClosed."""
        self.duct.close()

    def emplace_duct(
        self, backend: BackendKind | str, config: Mapping[str, Any] | None = None
    ) -> None:
        """Swap in a fresh duct of another kind.

        The caller must ensure no put/step is in flight. Counters and the
        outlet's cached value survive; unread messages in the old duct are
        discarded and counted in ``counters.discarded``.

        Raises:
            ConfigurationError: unknown kind or unusable backend config.
        """
        if self.closed:
            raise ChannelClosed("channel closed")
        new = make_duct(backend, self.capacity, config)
        old = self.duct
        self.counters.discarded += len(old)
        old.release()
        new.attach(self.counters)
        self.duct = new

    def __repr__(self) -> str:
        return f"Channel(kind={self.kind.value}, capacity={self.capacity}, buffered={self.buffered})"
