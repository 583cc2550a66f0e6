"""Frame transports between processes, and the per-process router.

Two adapters implement the same small contract:

* ``send_frame(dst, data) -> bool`` never blocks; ``False`` means the frame
  was not taken (peer gone, or its outgoing buffer is saturated).
* ``poll_frames() -> list[(src, data)]`` never blocks and returns every
  frame received since the last poll, in arrival order.

Frames between a fixed (sender, receiver) pair are delivered in send order
or not at all. :class:`LoopbackTransport` keeps everything in memory (ranks
are objects in one interpreter); :class:`SocketTransport` uses one TCP
stream per ordered rank pair with a u32 length prefix per frame.
"""

from __future__ import annotations

import logging
import os
import select
import socket
import struct
import threading
import time
from collections import deque
from pathlib import Path
from typing import Callable, Iterable

from .errors import ConfigurationError, FrameError, LoadError, RoutingError, TransportError
from .frame import LENGTH_PREFIX, decode_frame

log = logging.getLogger(__name__)

RANK_ENV = "BESTEFFORT_RANK"

# Channel ids at or above this value are reserved for collectives.
CONTROL_BASE = 0xFFFFFF00
# Pool and aggregator frames use ids in [POOL_BASE, CONTROL_BASE).
POOL_BASE = 0x80000000

_HANDSHAKE = struct.Struct("<I")


class TransportAdapter:
    """Interface shared by the concrete transports."""

    rank: int

    def send_frame(self, dst: int, data: bytes) -> bool:
        raise NotImplementedError

    def poll_frames(self) -> list[tuple[int, bytes]]:
        raise NotImplementedError

    def is_reachable(self, rank: int) -> bool:
        raise NotImplementedError

    def flush(self) -> None:
        """Push out anything buffered locally; optional."""

    def close(self) -> None:
        pass


class LoopbackHub:
    """In-memory registry connecting :class:`LoopbackTransport` endpoints."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._inboxes: dict[int, deque[tuple[int, bytes]]] = {}

    def register(self, rank: int) -> deque[tuple[int, bytes]]:
        with self._lock:
            if rank in self._inboxes:
                raise ConfigurationError(f"rank {rank} already registered on this hub")
            inbox: deque[tuple[int, bytes]] = deque()
            self._inboxes[rank] = inbox
            return inbox

    def unregister(self, rank: int) -> None:
        with self._lock:
            self._inboxes.pop(rank, None)

    def inbox(self, rank: int) -> deque[tuple[int, bytes]] | None:
        return self._inboxes.get(rank)

    def endpoints(self, num_ranks: int) -> list[LoopbackTransport]:
        return [LoopbackTransport(self, r) for r in range(num_ranks)]


class LoopbackTransport(TransportAdapter):
    def __init__(self, hub: LoopbackHub, rank: int) -> None:
        self.hub = hub
        self.rank = rank
        self._inbox = hub.register(rank)
        self._connected = True

    def send_frame(self, dst: int, data: bytes) -> bool:
        if not self._connected:
            return False
        inbox = self.hub.inbox(dst)
        if inbox is None:
            return False
        inbox.append((self.rank, bytes(data)))
        return True

    def poll_frames(self) -> list[tuple[int, bytes]]:
        out = []
        inbox = self._inbox
        try:
            while True:
                out.append(inbox.popleft())
        except IndexError:
            pass
        return out

    def is_reachable(self, rank: int) -> bool:
        return self._connected and self.hub.inbox(rank) is not None

    def close(self) -> None:
        """Leave the hub; subsequent sends to this rank fail."""
        self._connected = False
        self.hub.unregister(self.rank)


def load_manifest(path: str | os.PathLike) -> dict[int, tuple[str, int]]:
    """Parse ``<rank> <host>:<port>`` lines; ranks must be dense from 0."""
    out: dict[int, tuple[str, int]] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or ":" not in parts[1]:
            raise LoadError(f"expected '<rank> <host>:<port>', got {raw!r}", lineno)
        host, _, port = parts[1].rpartition(":")
        try:
            rank = int(parts[0])
            port_num = int(port)
        except ValueError:
            raise LoadError(f"non-integer rank or port in {raw!r}", lineno) from None
        if rank < 0 or rank in out:
            raise LoadError(f"bad or duplicate rank {rank}", lineno)
        if not 0 < port_num < 65536:
            raise LoadError(f"port {port_num} out of range", lineno)
        out[rank] = (host, port_num)
    if sorted(out) != list(range(len(out))):
        raise LoadError(f"ranks must be dense from 0, got {sorted(out)}")
    if not out:
        raise LoadError("manifest is empty")
    return out


def write_manifest(path: str | os.PathLike, addresses: dict[int, tuple[str, int]]) -> None:
    lines = [f"{r} {h}:{p}" for r, (h, p) in sorted(addresses.items())]
    Path(path).write_text("\n".join(lines) + "\n")


class _Inbound:
    __slots__ = ("sock", "buf", "open")

    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self.buf = bytearray()
        self.open = True


class _Outbound:
    __slots__ = ("sock", "buf", "open")

    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self.buf = bytearray()
        self.open = True


class SocketTransport(TransportAdapter):
    """TCP transport; one outgoing stream per peer, one incoming per peer.

    Sockets are non-blocking after setup. Outgoing bytes that the kernel
    will not take immediately wait in a per-peer buffer; once that buffer
    exceeds ``max_pending_bytes`` further frames are refused, which is how
    backpressure reaches the sender's staging buffers.
    """

    def __init__(
        self,
        rank: int,
        addresses: dict[int, tuple[str, int]],
        max_pending_bytes: int = 8 << 20,
    ) -> None:
        if rank not in addresses:
            raise ConfigurationError(f"rank {rank} missing from manifest")
        self.rank = rank
        self.addresses = dict(addresses)
        self.max_pending_bytes = max_pending_bytes
        self._out: dict[int, _Outbound] = {}
        self._in: dict[int, _Inbound] = {}
        self._self_inbox: deque[tuple[int, bytes]] = deque()
        self._listener: socket.socket | None = None

    @classmethod
    def from_manifest(cls, rank: int, path: str | os.PathLike, **kwargs) -> SocketTransport:
        return cls(rank, load_manifest(path), **kwargs)

    @property
    def peers(self) -> list[int]:
        return [r for r in self.addresses if r != self.rank]

    def listen(self) -> None:
        if self._listener is not None:
            return
        host, port = self.addresses[self.rank]
        lst = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        lst.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            lst.bind((host, port))
        except OSError as exc:
            lst.close()
            raise TransportError(f"rank {self.rank} cannot listen on {host}:{port}: {exc}") from exc
        lst.listen(max(8, len(self.addresses)))
        lst.setblocking(False)
        self._listener = lst

    def connect(self, timeout: float = 30.0) -> None:
        """Establish streams to and from every peer.

        Peers may start in any order; connection attempts are retried until
        ``timeout``.

        Raises:
            TransportError: some peer could not be reached in time.
        """
        self.listen()
        deadline = time.monotonic() + timeout
        pending_handshakes: list[tuple[socket.socket, bytearray]] = []
        while True:
            for peer in self.peers:
                if peer in self._out:
                    continue
                try:
                    sock = socket.create_connection(self.addresses[peer], timeout=0.5)
                except OSError:
                    continue
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                sock.sendall(_HANDSHAKE.pack(self.rank))
                sock.setblocking(False)
                self._out[peer] = _Outbound(sock)
            self._accept_pending(pending_handshakes)
            if len(self._out) == len(self.peers) and len(self._in) == len(self.peers):
                break
            if time.monotonic() > deadline:
                missing = sorted(set(self.peers) - (set(self._out) & set(self._in)))
                raise TransportError(f"rank {self.rank} could not connect to ranks {missing}")
            time.sleep(0.02)
        for sock, _ in pending_handshakes:
            sock.close()
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    def _accept_pending(self, pending: list[tuple[socket.socket, bytearray]]) -> None:
        assert self._listener is not None
        while True:
            try:
                sock, _ = self._listener.accept()
            except (BlockingIOError, InterruptedError):
                break
            sock.setblocking(False)
            pending.append((sock, bytearray()))
        for item in list(pending):
            sock, buf = item
            try:
                chunk = sock.recv(_HANDSHAKE.size - len(buf))
            except (BlockingIOError, InterruptedError):
                continue
            except OSError:
                pending.remove(item)
                sock.close()
                continue
            if not chunk:
                pending.remove(item)
                sock.close()
                continue
            buf.extend(chunk)
            if len(buf) == _HANDSHAKE.size:
                pending.remove(item)
                (peer,) = _HANDSHAKE.unpack(buf)
                if peer not in self.addresses or peer in self._in:
                    sock.close()
                    continue
                self._in[peer] = _Inbound(sock)

    def is_reachable(self, rank: int) -> bool:
        if rank == self.rank:
            return True
        out = self._out.get(rank)
        inb = self._in.get(rank)
        return out is not None and out.open and (inb is None or inb.open)

    def _flush_one(self, out: _Outbound) -> None:
        while out.buf:
            try:
                n = out.sock.send(out.buf)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                out.open = False
                out.buf.clear()
                return
            del out.buf[:n]

    def flush(self) -> None:
        for out in self._out.values():
            if out.open and out.buf:
                self._flush_one(out)

    def send_frame(self, dst: int, data: bytes) -> bool:
        if dst == self.rank:
            self._self_inbox.append((dst, bytes(data)))
            return True
        out = self._out.get(dst)
        if out is None or not out.open:
            return False
        if out.buf:
            self._flush_one(out)
            if len(out.buf) > self.max_pending_bytes:
                return False
        out.buf.extend(LENGTH_PREFIX.pack(len(data)))
        out.buf.extend(data)
        self._flush_one(out)
        return out.open

    def poll_frames(self) -> list[tuple[int, bytes]]:
        self.flush()
        frames: list[tuple[int, bytes]] = []
        while self._self_inbox:
            frames.append(self._self_inbox.popleft())
        for peer, inb in self._in.items():
            if not inb.open:
                continue
            while True:
                try:
                    chunk = inb.sock.recv(1 << 16)
                except (BlockingIOError, InterruptedError):
                    break
                except OSError:
                    inb.open = False
                    break
                if not chunk:
                    inb.open = False
                    break
                inb.buf.extend(chunk)
            buf = inb.buf
            pos = 0
            while len(buf) - pos >= LENGTH_PREFIX.size:
                (n,) = LENGTH_PREFIX.unpack_from(buf, pos)
                if len(buf) - pos - LENGTH_PREFIX.size < n:
                    break
                start = pos + LENGTH_PREFIX.size
                frames.append((peer, bytes(buf[start : start + n])))
                pos = start + n
            if pos:
                del buf[:pos]
        return frames

    def close(self, linger: float = 5.0) -> None:
        """Flush outgoing data (up to ``linger`` seconds) and close all sockets."""
        deadline = time.monotonic() + linger
        for out in self._out.values():
            while out.open and out.buf and time.monotonic() < deadline:
                self._flush_one(out)
                if out.buf:
                    select.select([], [out.sock], [], 0.05)
        for out in self._out.values():
            try:
                out.sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass
            out.sock.close()
            out.open = False
        for inb in self._in.values():
            inb.sock.close()
            inb.open = False
        if self._listener is not None:
            self._listener.close()
            self._listener = None


def free_port(host: str = "127.0.0.1") -> int:
    """An ephemeral port that was free at the time of the call."""
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def local_addresses(num_ranks: int, host: str = "127.0.0.1") -> dict[int, tuple[str, int]]:
    return {r: (host, free_port(host)) for r in range(num_ranks)}


Handler = Callable[[int, list[bytes]], None]


class ProcessComm:
    """Per-process owner of a transport: serializes access and routes frames.

    Frames are routed by ``channel_id`` to registered handlers; ids at or
    above :data:`CONTROL_BASE` land in a control inbox consumed by the
    collectives in :mod:`besteffort.sync`. Frames nobody claims are counted
    in ``unroutable`` and discarded.
    """

    def __init__(self, transport: TransportAdapter) -> None:
        self.transport = transport
        self.rank = transport.rank
        self._lock = threading.RLock()
        self._routes: dict[int, Handler] = {}
        self.control: deque[tuple[int, int, bytes]] = deque()
        self.unroutable = 0
        self.decode_errors = 0
        self.routing_errors = 0
        self.frames_sent = 0
        self.frames_received = 0

    def register(self, channel_id: int, handler: Handler) -> None:
        with self._lock:
            self._routes[channel_id] = handler

    def unregister(self, channel_id: int) -> None:
        with self._lock:
            self._routes.pop(channel_id, None)

    def unregister_many(self, channel_ids: Iterable[int]) -> None:
        with self._lock:
            for cid in channel_ids:
                self._routes.pop(cid, None)

    def is_reachable(self, rank: int) -> bool:
        return self.transport.is_reachable(rank)

    def send(self, dst: int, data: bytes) -> bool:
        with self._lock:
            ok = self.transport.send_frame(dst, data)
            if ok:
                self.frames_sent += 1
            return ok

    def pump(self) -> int:
        """Drain the transport and dispatch every frame; returns the count."""
        with self._lock:
            frames = self.transport.poll_frames()
            for src, data in frames:
                self._route(src, data)
            self.frames_received += len(frames)
            return len(frames)

    def _route(self, src: int, data: bytes) -> None:
        try:
            channel_id, payloads = decode_frame(data)
        except FrameError as exc:
            self.decode_errors += 1
            log.warning("dropping undecodable frame from rank %d: %s", src, exc)
            return
        if channel_id >= CONTROL_BASE:
            self.control.append((src, channel_id, payloads[0]))
            return
        handler = self._routes.get(channel_id)
        if handler is None:
            self.unroutable += 1
            return
        try:
            handler(src, payloads)
        except RoutingError as exc:
            self.routing_errors += 1
            log.warning("routing error on channel %d from rank %d: %s", channel_id, src, exc)

    def close(self) -> None:
        with self._lock:
            self.transport.close()
