"""Duct backends: the state object that actually moves messages.

Every duct is a bounded FIFO of :class:`Message` objects with the same
small protocol (``push_nowait``/``push``/``pop_nowait``/``drain``/``pop``).
Which one a channel uses decides whether its endpoints may live on the same
thread, on different threads, or in different processes.

Concurrency: the inter-thread duct supports exactly one producer thread and
one consumer thread at a time. Multi-producer or multi-consumer use of any
duct is out of contract.
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from collections import deque
from typing import TYPE_CHECKING, Any, Mapping

from .errors import (
    ChannelClosed,
    ChannelTimeout,
    ConfigurationError,
    RemoteEndpoint,
    WouldDeadlock,
)
from .frame import encode_frame
from .message import Counters, Message

if TYPE_CHECKING:
    from .transport import ProcessComm

DEFAULT_CAPACITY = 64
DEFAULT_PAYLOAD_FORMAT = "<I"

# Re-check interval while blocked; bounds the cost of any missed wakeup.
_WAIT_SLICE = 0.05
# Poll interval for ducts that have no local wakeup source.
_POLL_SLICE = 0.0005


class BackendKind(enum.Enum):
    INTRA_THREAD = "intra_thread"
    INTER_THREAD = "inter_thread"
    INTER_PROCESS = "inter_process"


class PayloadCodec:
    """Fixed-width payload (de)serialization backed by :mod:`struct`."""

    def __init__(self, fmt: str = DEFAULT_PAYLOAD_FORMAT) -> None:
        try:
            self._struct = struct.Struct(fmt)
        except struct.error as exc:
            raise ConfigurationError(f"bad payload format {fmt!r}: {exc}") from exc
        self.format = fmt
        self.width = self._struct.size
        self._single = len(self._struct.unpack(bytes(self.width))) == 1

    def pack(self, payload: Any) -> bytes:
        if self._single:
            return self._struct.pack(payload)
        return self._struct.pack(*payload)

    def unpack(self, data: bytes) -> Any:
        values = self._struct.unpack(data)
        return values[0] if self._single else values


def _deadline(timeout: float | None) -> float | None:
    return None if timeout is None else time.monotonic() + timeout


def _remaining(deadline: float | None) -> float:
    if deadline is None:
        return _WAIT_SLICE
    left = deadline - time.monotonic()
    if left <= 0:
        raise ChannelTimeout("timed out waiting on duct")
    return min(left, _WAIT_SLICE)


class Duct:
    """Base class; subclasses override the operations they support."""

    kind: BackendKind
    can_send = True
    can_receive = True

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigurationError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.counters: Counters | None = None
        self._closed = False

    def attach(self, counters: Counters) -> None:
        self.counters = counters

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        self._closed = True

    def release(self) -> None:
        """Called when the duct is swapped out of its channel."""

    def __len__(self) -> int:
        raise NotImplementedError

    def push_nowait(self, msg: Message) -> bool:
        raise RemoteEndpoint(f"{type(self).__name__} has no local send side")

    def push(self, msg: Message, timeout: float | None = None) -> None:
        raise RemoteEndpoint(f"{type(self).__name__} has no local send side")

    def pop_nowait(self) -> Message | None:
        raise RemoteEndpoint(f"{type(self).__name__} has no local receive side")

    def drain(self) -> list[Message]:
        raise RemoteEndpoint(f"{type(self).__name__} has no local receive side")

    def pop(self, timeout: float | None = None) -> Message:
        raise RemoteEndpoint(f"{type(self).__name__} has no local receive side")


class IntraThreadDuct(Duct):
    """Plain bounded deque; producer and consumer share one thread."""

    kind = BackendKind.INTRA_THREAD

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        super().__init__(capacity)
        self._buf: deque[Message] = deque()

    def __len__(self) -> int:
        return len(self._buf)

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        if len(self._buf) >= self.capacity:
            return False
        self._buf.append(msg)
        return True

    def push(self, msg: Message, timeout: float | None = None) -> None:
        if not self.push_nowait(msg):
            raise WouldDeadlock("blocking put on a full same-thread duct can never complete")

    def pop_nowait(self) -> Message | None:
        if self._buf:
            return self._buf.popleft()
        if self._closed:
            raise ChannelClosed("channel closed")
        return None

    def drain(self) -> list[Message]:
        if not self._buf and self._closed:
            raise ChannelClosed("channel closed")
        out = list(self._buf)
        self._buf.clear()
        return out

    def pop(self, timeout: float | None = None) -> Message:
        msg = self.pop_nowait()
        if msg is None:
            raise WouldDeadlock("blocking step on an empty same-thread duct can never complete")
        return msg


class InterThreadDuct(Duct):
    """Bounded SPSC queue safe for one producer and one consumer thread.

    The fast path touches only the deque (append/popleft are atomic). A
    condition variable is used only when a side must block; each side raises
    its own ``waiting`` flag under the lock and re-checks the buffer before
    sleeping, so a wakeup cannot be lost.
    """

    kind = BackendKind.INTER_THREAD

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        super().__init__(capacity)
        self._buf: deque[Message] = deque()
        self._cond = threading.Condition(threading.Lock())
        self._producer_waiting = False
        self._consumer_waiting = False

    def __len__(self) -> int:
        return len(self._buf)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def _wake(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        if len(self._buf) >= self.capacity:
            return False
        self._buf.append(msg)
        if self._consumer_waiting:
            self._wake()
        return True

    def push(self, msg: Message, timeout: float | None = None) -> None:
        buf = self._buf
        deadline = None
        while len(buf) >= self.capacity:
            if self._closed:
                raise ChannelClosed("channel closed while blocked in put")
            if deadline is None and timeout is not None:
                deadline = _deadline(timeout)
            with self._cond:
                self._producer_waiting = True
                if len(buf) >= self.capacity and not self._closed:
                    self._cond.wait(_remaining(deadline))
                self._producer_waiting = False
        if self._closed:
            raise ChannelClosed("channel closed")
        buf.append(msg)
        if self._consumer_waiting:
            self._wake()

    def pop_nowait(self) -> Message | None:
        try:
            msg = self._buf.popleft()
        except IndexError:
            if self._closed:
                raise ChannelClosed("channel closed") from None
            return None
        if self._producer_waiting:
            self._wake()
        return msg

    def drain(self) -> list[Message]:
        buf = self._buf
        out = []
        # popleft rather than list()+clear() so a concurrent append is never lost
        try:
            while True:
                out.append(buf.popleft())
        except IndexError:
            pass
        if not out and self._closed:
            raise ChannelClosed("channel closed")
        if out and self._producer_waiting:
            self._wake()
        return out

    def pop(self, timeout: float | None = None) -> Message:
        buf = self._buf
        deadline = None
        while not buf:
            if self._closed:
                raise ChannelClosed("channel closed while blocked in step")
            if deadline is None and timeout is not None:
                deadline = _deadline(timeout)
            with self._cond:
                self._consumer_waiting = True
                if not buf and not self._closed:
                    self._cond.wait(_remaining(deadline))
                self._consumer_waiting = False
        msg = buf.popleft()
        if self._producer_waiting:
            self._wake()
        return msg


class SendDuct(Duct):
    """Send half of an inter-process duct.

    Accepted messages go to a bounded staging buffer which is flushed as a
    single frame whenever the transport accepts it. Drops happen only when
    the staging buffer is full.
    """

    kind = BackendKind.INTER_PROCESS
    can_receive = False

    def __init__(
        self,
        comm: ProcessComm,
        peer: int,
        channel_id: int,
        capacity: int = DEFAULT_CAPACITY,
        codec: PayloadCodec | None = None,
    ) -> None:
        super().__init__(capacity)
        self.comm = comm
        self.peer = peer
        self.channel_id = channel_id
        self.codec = codec or PayloadCodec()
        self._staging: deque[Message] = deque()
        self.frames_sent = 0

    def __len__(self) -> int:
        return len(self._staging)

    def flush(self) -> bool:
        """Try to ship everything staged; returns True if staging is empty."""
        if not self._staging:
            return True
        pack = self.codec.pack
        frame = encode_frame(self.channel_id, [pack(m.payload) for m in self._staging])
        if self.comm.send(self.peer, frame):
            self._staging.clear()
            self.frames_sent += 1
            return True
        return False

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        if len(self._staging) >= self.capacity and not self.flush():
            return False
        self._staging.append(msg)
        self.flush()
        return True

    def push(self, msg: Message, timeout: float | None = None) -> None:
        deadline = _deadline(timeout)
        while not self.push_nowait(msg):
            if deadline is not None and time.monotonic() > deadline:
                raise ChannelTimeout("timed out waiting for staging space")
            self.comm.pump()
            time.sleep(_POLL_SLICE)


class RecvDuct(Duct):
    """Receive half of an inter-process duct, fed by the process pump.

    Reads pump the owning :class:`ProcessComm` first, so no background thread
    is needed. Arrivals beyond ``capacity`` are discarded and counted in
    ``Counters.recv_dropped``.
    """

    kind = BackendKind.INTER_PROCESS
    can_send = False

    def __init__(
        self,
        comm: ProcessComm,
        capacity: int = DEFAULT_CAPACITY,
        codec: PayloadCodec | None = None,
    ) -> None:
        super().__init__(capacity)
        self.comm = comm
        self.codec = codec or PayloadCodec()
        self._buf: deque[Message] = deque()
        self._seq = 0
        self.overflow = 0

    def __len__(self) -> int:
        return len(self._buf)

    def deliver(self, raw_payloads: list[bytes]) -> None:
        """Append decoded payloads; called with the comm lock held."""
        unpack = self.codec.unpack
        for raw in raw_payloads:
            if len(self._buf) >= self.capacity:
                self.overflow += 1
                if self.counters is not None:
                    self.counters.recv_dropped += 1
                continue
            self._seq += 1
            self._buf.append(Message(self._seq, unpack(raw)))

    def pop_nowait(self) -> Message | None:
        self.comm.pump()
        try:
            return self._buf.popleft()
        except IndexError:
            if self._closed:
                raise ChannelClosed("channel closed") from None
            return None

    def drain(self) -> list[Message]:
        self.comm.pump()
        out = []
        try:
            while True:
                out.append(self._buf.popleft())
        except IndexError:
            pass
        if not out and self._closed:
            raise ChannelClosed("channel closed")
        return out

    def pop(self, timeout: float | None = None) -> Message:
        deadline = _deadline(timeout)
        while True:
            msg = self.pop_nowait()
            if msg is not None:
                return msg
            if deadline is not None and time.monotonic() > deadline:
                raise ChannelTimeout("timed out waiting for a remote message")
            time.sleep(_POLL_SLICE)


class InterProcessDuct(Duct):
    """Both halves of an inter-process duct, for pairs whose two endpoints
    share a process but must route through the transport (e.g. to itself).
    """

    kind = BackendKind.INTER_PROCESS

    def __init__(
        self,
        comm: ProcessComm,
        peer: int,
        channel_id: int,
        capacity: int = DEFAULT_CAPACITY,
        codec: PayloadCodec | None = None,
    ) -> None:
        super().__init__(capacity)
        codec = codec or PayloadCodec()
        self.comm = comm
        self.channel_id = channel_id
        self.sender = SendDuct(comm, peer, channel_id, capacity, codec)
        self.receiver = RecvDuct(comm, capacity, codec)
        comm.register(channel_id, lambda src, payloads: self.receiver.deliver(payloads))

    def attach(self, counters: Counters) -> None:
        super().attach(counters)
        self.sender.attach(counters)
        self.receiver.attach(counters)

    def close(self) -> None:
        super().close()
        self.sender.close()
        self.receiver.close()

    def release(self) -> None:
        self.comm.unregister(self.channel_id)

    def __len__(self) -> int:
        return len(self.receiver)

    def _room(self) -> bool:
        if self.sender.peer != self.comm.rank:
            return True
        # looped back to this rank: the receive buffer bounds the channel
        self.comm.pump()
        return len(self.receiver) + len(self.sender) < self.capacity

    def push_nowait(self, msg: Message) -> bool:
        if self._closed:
            raise ChannelClosed("channel closed")
        if not self._room():
            return False
        return self.sender.push_nowait(msg)

    def push(self, msg: Message, timeout: float | None = None) -> None:
        deadline = _deadline(timeout)
        while not self.push_nowait(msg):
            if deadline is not None and time.monotonic() > deadline:
                raise ChannelTimeout("timed out waiting for buffer space")
            time.sleep(_POLL_SLICE)

    def pop_nowait(self) -> Message | None:
        return self.receiver.pop_nowait()

    def drain(self) -> list[Message]:
        return self.receiver.drain()

    def pop(self, timeout: float | None = None) -> Message:
        return self.receiver.pop(timeout)


def make_duct(
    kind: BackendKind | str,
    capacity: int = DEFAULT_CAPACITY,
    config: Mapping[str, Any] | None = None,
) -> Duct:
    """Build a duct of the requested kind.

    Inter-process ducts need ``config`` with ``comm`` (a
    :class:`~besteffort.transport.ProcessComm`), ``peer`` (rank) and
    ``channel_id``; ``payload_format`` is optional. An unreachable peer is
    rejected here rather than at first send.
    """
    try:
        kind = BackendKind(kind)
    except ValueError:
        raise ConfigurationError(f"unknown backend kind {kind!r}") from None
    config = dict(config or {})
    if kind is BackendKind.INTRA_THREAD:
        return IntraThreadDuct(capacity)
    if kind is BackendKind.INTER_THREAD:
        return InterThreadDuct(capacity)
    missing = {"comm", "peer", "channel_id"} - config.keys()
    if missing:
        raise ConfigurationError(f"inter-process duct needs config keys {sorted(missing)}")
    comm = config["comm"]
    peer = config["peer"]
    if not comm.is_reachable(peer):
        raise ConfigurationError(f"peer rank {peer} is unreachable")
    codec = PayloadCodec(config.get("payload_format", DEFAULT_PAYLOAD_FORMAT))
    return InterProcessDuct(comm, peer, config["channel_id"], capacity, codec)
