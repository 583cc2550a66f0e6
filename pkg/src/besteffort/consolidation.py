"""Consolidating many logical channels into single transport frames.

Pooling ships one payload per member channel per dispatch and dispatches
as soon as every member slot is filled. Aggregation ships any number of
payloads per member and dispatches on an explicit :meth:`Aggregator.flush`.
Both sides agree on member order, which is what makes positional routing on
the receiver possible.
"""

from __future__ import annotations

from typing import Any, Callable, Sequence

from .channel import PutOutcome
from .ducts import BackendKind, Duct, PayloadCodec, RecvDuct
from .errors import ChannelClosed, FrameError, RoutingError
from .frame import decode_frame, decode_subframes, encode_frame, encode_subframes
from .message import Message

SendFn = Callable[[bytes], bool]


class Pool:
    """Sender side of a pool of ``size`` member channels.

    Args:
        send: ships one encoded frame, returns False if it was refused.
        pool_id: channel id stamped on the dispatched frames.
        size: number of member channels.
        codec: fixed-width payload codec shared by all members.

    ``epoch`` numbers the round currently being filled, starting at 1.
    A slot written twice in one round keeps the newer payload and counts the
    older one in ``drops[member]``. A dispatch refused by the transport
    loses the round; it is counted in ``failed_dispatches``.
    """

    def __init__(self, send: SendFn, pool_id: int, size: int, codec: PayloadCodec | None = None) -> None:
        if size < 1:
            raise ValueError("a pool needs at least one member")
        self.send = send
        self.pool_id = pool_id
        self.size = size
        self.codec = codec or PayloadCodec()
        self.epoch = 1
        self.drops = [0] * size
        self.frames_sent = 0
        self.failed_dispatches = 0
        self._slots: list[bytes | None] = [None] * size
        self._filled = 0

    @property
    def pending(self) -> int:
        return self._filled

    def put(self, member: int, payload: Any) -> PutOutcome:
        if not 0 <= member < self.size:
            raise IndexError(f"member index {member} outside pool of {self.size}")
        raw = self.codec.pack(payload)
        slots = self._slots
        if slots[member] is None:
            self._filled += 1
        else:
            self.drops[member] += 1
        slots[member] = raw
        if self._filled == self.size:
            self._dispatch()
        return PutOutcome.ACCEPTED

    def slot_filled(self, member: int) -> bool:
        """True if the member's slot is currently filled."""
        return self._slots[member] is not None

    def _dispatch(self) -> None:
        frame = encode_frame(self.pool_id, self._slots)  # type: ignore[arg-type]
        if self.send(frame):
            self.frames_sent += 1
        else:
            self.failed_dispatches += 1
        self._slots = [None] * self.size
        self._filled = 0
        self.epoch += 1


def pool_put(pool: Pool, member_index: int, payload: Any) -> PutOutcome:
    return pool.put(member_index, payload)


class PoolReceiver:
    """Receiver side of a pool: payload ``i`` goes to member ``i``'s sink."""

    def __init__(self, pool_id: int, sinks: Sequence[RecvDuct]) -> None:
        self.pool_id = pool_id
        self.sinks = list(sinks)
        self.errors = 0
        self.frames_routed = 0

    @property
    def size(self) -> int:
        return len(self.sinks)

    def route(self, payloads: Sequence[bytes]) -> None:
        if len(payloads) != len(self.sinks):
            self.errors += 1
            raise RoutingError(
                f"pool {self.pool_id}: frame has {len(payloads)} payloads for {len(self.sinks)} members"
            )
        for sink, raw in zip(self.sinks, payloads):
            sink.deliver([raw])
        self.frames_routed += 1

    def handler(self, src: int, payloads: list[bytes]) -> None:
        self.route(payloads)


def pool_route(receiver: PoolReceiver, frame: bytes | Sequence[bytes]) -> None:
    """Route an encoded frame (or its already-decoded payload list)."""
    if isinstance(frame, (bytes, bytearray, memoryview)):
        frame = decode_frame(frame).payloads
    receiver.route(frame)


class Aggregator:
    """Sender side of an aggregation group with explicit flushes."""

    def __init__(self, send: SendFn, group_id: int, size: int, codec: PayloadCodec | None = None) -> None:
        if size < 1:
            raise ValueError("an aggregator needs at least one member")
        self.send = send
        self.group_id = group_id
        self.size = size
        self.codec = codec or PayloadCodec()
        self.pending: list[list[bytes]] = [[] for _ in range(size)]
        self.frames_sent = 0
        self.failed_flushes = 0

    def put(self, member: int, payload: Any) -> PutOutcome:
        if not 0 <= member < self.size:
            raise IndexError(f"member index {member} outside aggregator of {self.size}")
        self.pending[member].append(self.codec.pack(payload))
        return PutOutcome.ACCEPTED

    def flush(self) -> int:
        """Ship all pending payloads in one frame; returns frames dispatched."""
        groups = [(i, p) for i, p in enumerate(self.pending) if p]
        if not groups:
            return 0
        region = encode_subframes(groups, self.codec.width)
        self.pending = [[] for _ in range(self.size)]
        if self.send(encode_frame(self.group_id, [region])):
            self.frames_sent += 1
        else:
            self.failed_flushes += 1
        return 1


def aggregate_flush(aggregator: Aggregator) -> int:
    return aggregator.flush()


class AggregatorReceiver:
    """Receiver side of an aggregation group."""

    def __init__(self, group_id: int, sinks: Sequence[RecvDuct], codec: PayloadCodec | None = None) -> None:
        self.group_id = group_id
        self.sinks = list(sinks)
        self.codec = codec or PayloadCodec()
        self.errors = 0

    def route(self, payloads: Sequence[bytes]) -> None:
        if len(payloads) != 1:
            self.errors += 1
            raise RoutingError(f"aggregate frame must carry one region, got {len(payloads)}")
        try:
            groups = decode_subframes(payloads[0], self.codec.width)
        except FrameError as exc:
            self.errors += 1
            raise RoutingError(str(exc)) from exc
        for member, raws in groups:
            if not 0 <= member < len(self.sinks):
                self.errors += 1
                raise RoutingError(f"member index {member} outside group of {len(self.sinks)}")
        for member, raws in groups:
            self.sinks[member].deliver(raws)

    def handler(self, src: int, payloads: list[bytes]) -> None:
        self.route(payloads)


class PoolSlotDuct(Duct):
    """Send half of a channel whose messages ride in a :class:`Pool`.

    Capacity is effectively one message per round: a second put before the
    pool dispatches replaces the first and counts it as dropped.
    """

    kind = BackendKind.INTER_PROCESS
    can_receive = False

    def __init__(self, pool: Pool, member: int) -> None:
        super().__init__(1)
        self.pool = pool
        self.member = member

    def __len__(self) -> int:
        return 1 if self.pool.slot_filled(self.member) else 0

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        if self.pool.slot_filled(self.member) and self.counters is not None:
            self.counters.puts_dropped += 1
        self.pool.put(self.member, msg.payload)
        return True

    def push(self, msg: Message, timeout: float | None = None) -> None:
        self.push_nowait(msg)


class AggregateSlotDuct(Duct):
    """Send half of a channel whose messages ride in an :class:`Aggregator`."""

    kind = BackendKind.INTER_PROCESS
    can_receive = False

    def __init__(self, aggregator: Aggregator, member: int) -> None:
        super().__init__(1)
        self.aggregator = aggregator
        self.member = member

    def __len__(self) -> int:
        return len(self.aggregator.pending[self.member])

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        self.aggregator.put(self.member, msg.payload)
        return True

    def push(self, msg: Message, timeout: float | None = None) -> None:
        self.push_nowait(msg)


def comm_sender(comm, dst: int) -> SendFn:
    """Adapt a :class:`~besteffort.transport.ProcessComm` into a SendFn."""

    def send(frame: bytes) -> bool:
        return comm.send(dst, frame)

    return send


__all__ = [
    "Aggregator",
    "AggregatorReceiver",
    "AggregateSlotDuct",
    "Pool",
    "PoolReceiver",
    "PoolSlotDuct",
    "aggregate_flush",
    "comm_sender",
    "pool_put",
    "pool_route",
]
