"""Asynchronicity modes and the collectives they rely on.

A :class:`WorkerGroup` is every worker thread of every rank taking part in
a run. Its collectives (barrier, start-epoch negotiation, gather) work in
two phases: the threads of one process meet at a ``threading.Barrier``,
whose action runs the cross-rank phase, a collect/release round through
rank 0 over the process's :class:`~besteffort.transport.ProcessComm`.

Run loops (see :func:`run`):

====  =========================================================
mode  behaviour
====  =========================================================
0     barrier after every update
1     updates for one chunk duration, then a barrier
2     barrier at every ``t0 + k * epoch`` instant before the end
3     no barriers
4     no barriers and inter-cpu communication switched off
====  =========================================================
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .errors import BarrierError, ConfigurationError
from .frame import encode_frame
from .transport import CONTROL_BASE, ProcessComm

ARRIVE_CHANNEL = CONTROL_BASE
RELEASE_CHANNEL = CONTROL_BASE + 1

_CTRL = struct.Struct("<II")  # generation, collective kind
_LEN = struct.Struct("<I")
_T0 = struct.Struct("<d")

DEFAULT_TIMEOUT = 30.0
DEFAULT_START_DELAY = 1.0


class AsyncMode(enum.IntEnum):
    BARRIER_EVERY_UPDATE = 0
    ROLLING_BARRIER = 1
    FIXED_BARRIER = 2
    NO_BARRIER = 3
    NO_COMM = 4


class _Kind(enum.IntEnum):
    BARRIER = 1
    EPOCH = 2
    GATHER = 3


def _pack_list(items: list[bytes]) -> bytes:
    return _LEN.pack(len(items)) + b"".join(_LEN.pack(len(b)) + b for b in items)


def _unpack_list(data: bytes) -> list[bytes]:
    (n,) = _LEN.unpack_from(data, 0)
    pos = _LEN.size
    out = []
    for _ in range(n):
        (size,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        out.append(data[pos : pos + size])
        pos += size
    return out


class WorkerGroup:
    """All workers of a run: ``num_threads`` per process on ``num_ranks`` processes.

    Args:
        num_threads: worker threads in this process; each must take part in
            every collective.
        comm: this process's router; required when ``num_ranks > 1``.
        num_ranks: number of processes.
        timeout: seconds a collective may wait before raising BarrierError.
        start_delay: lead time rank 0 adds when picking the shared start.
    """

    def __init__(
        self,
        num_threads: int = 1,
        comm: ProcessComm | None = None,
        num_ranks: int = 1,
        timeout: float = DEFAULT_TIMEOUT,
        start_delay: float = DEFAULT_START_DELAY,
    ) -> None:
        if num_threads < 1 or num_ranks < 1:
            raise ConfigurationError("a group needs at least one thread and one rank")
        if num_ranks > 1 and comm is None:
            raise ConfigurationError("a multi-rank group needs a ProcessComm")
        self.num_threads = num_threads
        self.num_ranks = num_ranks
        self.comm = comm
        self.rank = comm.rank if comm is not None else 0
        self.timeout = timeout
        self.start_delay = start_delay
        self.completed = 0
        self._local = threading.Barrier(num_threads, action=self._cross_rank)
        self._lock = threading.Lock()
        self._contrib: list[bytes] = []
        self._kind = _Kind.BARRIER
        self._gen = 0
        self._result: tuple[bytes, dict[int, list[bytes]] | None] = (b"", None)
        self._stash: dict[tuple[int, int, int], bytes] = {}

    @property
    def size(self) -> int:
        return self.num_threads * self.num_ranks

    @property
    def is_coordinator(self) -> bool:
        return self.rank == 0

    def reset(self) -> None:
        """Repair the local barrier after an aborted collective."""
        self._local.reset()
        self._contrib = []

    # -- collectives ---------------------------------------------------

    def barrier(self, stop_vote: bool = False) -> bool:
        """Wait for every worker; returns True if any worker voted to stop."""
        reply, _ = self._collective(_Kind.BARRIER, b"\x01" if stop_vote else b"\x00")
        return reply == b"\x01"

    def negotiate_start(self) -> float:
        """Agree on a wall-clock start time picked by rank 0."""
        reply, _ = self._collective(_Kind.EPOCH, b"")
        return _T0.unpack(reply)[0]

    def gather(self, body: bytes) -> dict[int, list[bytes]] | None:
        """Collect one blob per worker on rank 0 (keyed by rank); None elsewhere."""
        _, gathered = self._collective(_Kind.GATHER, body)
        return gathered

    def _collective(self, kind: _Kind, body: bytes) -> tuple[bytes, dict[int, list[bytes]] | None]:
        with self._lock:
            self._contrib.append(body)
            self._kind = kind
        try:
            self._local.wait(self.timeout)
        except threading.BrokenBarrierError:
            raise BarrierError("collective aborted: barrier broken or timed out") from None
        return self._result

    def _reduce(self, kind: _Kind, gathered: dict[int, list[bytes]]) -> bytes:
        if kind is _Kind.BARRIER:
            votes = (b for bodies in gathered.values() for b in bodies)
            return b"\x01" if any(v == b"\x01" for v in votes) else b"\x00"
        if kind is _Kind.EPOCH:
            return _T0.pack(time.time() + self.start_delay)
        return b""

    def _cross_rank(self) -> None:
        # Runs in exactly one thread per process while the others wait.
        contrib, self._contrib = self._contrib, []
        kind = self._kind
        gen = self._gen
        self._gen += 1
        if self.num_ranks == 1:
            gathered = {0: contrib}
            self._result = (self._reduce(kind, gathered), gathered)
        elif self.rank == 0:
            others = set(range(1, self.num_ranks))
            arrivals = self._await(ARRIVE_CHANNEL, gen, others)
            gathered = {0: contrib}
            for src, blob in arrivals.items():
                gathered[src] = _unpack_list(blob)
            reply = self._reduce(kind, gathered)
            for dst in sorted(others):
                self._send(dst, RELEASE_CHANNEL, gen, kind, reply)
            self._result = (reply, dict(sorted(gathered.items())))
        else:
            self._send(0, ARRIVE_CHANNEL, gen, kind, _pack_list(contrib))
            reply = self._await(RELEASE_CHANNEL, gen, {0})[0]
            self._result = (reply, None)
        self.completed += 1

    def _send(self, dst: int, channel: int, gen: int, kind: _Kind, body: bytes) -> None:
        assert self.comm is not None
        frame = encode_frame(channel, [_CTRL.pack(gen, kind) + body])
        if not self.comm.send(dst, frame):
            raise BarrierError(f"rank {self.rank}: could not reach rank {dst}")

    def _await(self, channel: int, gen: int, sources: set[int]) -> dict[int, bytes]:
        assert self.comm is not None
        comm = self.comm
        deadline = time.monotonic() + self.timeout
        got: dict[int, bytes] = {}
        while True:
            for src in sources - got.keys():
                blob = self._stash.pop((channel, gen, src), None)
                if blob is not None:
                    got[src] = blob
            if len(got) == len(sources):
                return got
            comm.pump()
            while comm.control:
                src, cid, blob = comm.control.popleft()
                g, _ = _CTRL.unpack_from(blob, 0)
                self._stash[(cid, g, src)] = blob[_CTRL.size :]
            if any((channel, gen, s) in self._stash for s in sources - got.keys()):
                continue
            lost = [s for s in sources - got.keys() if not comm.is_reachable(s)]
            if lost:
                raise BarrierError(f"rank {self.rank}: peers {lost} disconnected")
            if time.monotonic() > deadline:
                missing = sorted(sources - got.keys())
                raise BarrierError(f"rank {self.rank}: timed out waiting for ranks {missing}")
            time.sleep(0.0002)


def barrier(group: WorkerGroup, stop_vote: bool = False) -> bool:
    return group.barrier(stop_vote)


def negotiate_start_epoch(group: WorkerGroup) -> float:
    """Shared start time: rank 0's wall clock plus the group's start delay."""
    return group.negotiate_start()


@dataclass(frozen=True)
class SyncPolicy:
    """Mode plus its timing parameters (seconds)."""

    mode: AsyncMode = AsyncMode.BARRIER_EVERY_UPDATE
    chunk_s: float = 0.010
    epoch_s: float = 1.0
    skew_epochs: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", AsyncMode(self.mode))
        if self.chunk_s <= 0:
            raise ConfigurationError("chunk duration must be positive")
        if self.epoch_s <= 0:
            raise ConfigurationError("epoch period must be positive")


@dataclass
class RunReport:
    mode: AsyncMode
    updates_completed: int = 0
    wall_time: float = 0.0
    barriers_executed: int = 0
    messages_sent: int = 0
    messages_dropped: int = 0
    clock_reads: int = 0
    aborted: bool = False
    error: str | None = None

    @property
    def update_rate(self) -> float:
        return self.updates_completed / self.wall_time if self.wall_time > 0 else 0.0


UpdateFn = Callable[[bool], None]


def run(
    policy: SyncPolicy | AsyncMode,
    group: WorkerGroup,
    update_fn: UpdateFn,
    duration: float,
    *,
    max_updates: int | None = None,
    until: Callable[[], bool] | None = None,
    traffic: Callable[[], tuple[int, int]] | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> RunReport:
    """Drive one worker's update loop under ``policy``; call from every worker.

    ``update_fn(communicate)`` performs one update; ``communicate`` is False
    in mode 4. The loop ends at the first check after ``duration`` seconds
    past the negotiated start, after ``max_updates`` updates, or once
    ``until()`` is true. In barrier-synchronized modes 0 and 1 the stop
    decision is a vote carried by the barrier, so all workers stop together.
    ``traffic()`` supplies (sent, dropped) message counts for the report.
    """
    if not isinstance(policy, SyncPolicy):
        policy = SyncPolicy(policy)
    mode = policy.mode
    report = RunReport(mode)
    reads = 0

    def now() -> float:
        nonlocal reads
        reads += 1
        return clock()

    if policy.skew_epochs:
        t0 = now()
    else:
        try:
            t0_wall = group.negotiate_start()
        except BarrierError as exc:
            report.aborted, report.error = True, str(exc)
            return report
        t0 = now() + (t0_wall - time.time())
        delay = t0 - clock()
        if delay > 0:
            time.sleep(delay)
    deadline = t0 + duration

    def done(t: float) -> bool:
        if t >= deadline:
            return True
        if max_updates is not None and report.updates_completed >= max_updates:
            return True
        return until is not None and until()

    communicate = mode is not AsyncMode.NO_COMM
    t = t0
    try:
        if mode in (AsyncMode.NO_BARRIER, AsyncMode.NO_COMM):
            while True:
                update_fn(communicate)
                report.updates_completed += 1
                t = now()
                if done(t):
                    break
        elif mode is AsyncMode.BARRIER_EVERY_UPDATE:
            while True:
                update_fn(True)
                report.updates_completed += 1
                t = now()
                stop = group.barrier(done(t))
                report.barriers_executed += 1
                if stop:
                    break
        elif mode is AsyncMode.ROLLING_BARRIER:
            while True:
                chunk_end = t + policy.chunk_s
                while True:
                    update_fn(True)
                    report.updates_completed += 1
                    t = now()
                    if t >= chunk_end or done(t):
                        break
                stop = group.barrier(done(t))
                report.barriers_executed += 1
                if stop:
                    break
                t = now()
        else:  # FIXED_BARRIER
            k = 1
            while True:
                update_fn(True)
                report.updates_completed += 1
                t = now()
                # every worker executes every boundary before the deadline
                while t0 + k * policy.epoch_s < deadline and t >= t0 + k * policy.epoch_s:
                    group.barrier()
                    report.barriers_executed += 1
                    k += 1
                if done(t):
                    while t0 + k * policy.epoch_s < deadline:
                        group.barrier()
                        report.barriers_executed += 1
                        k += 1
                    break
    except BarrierError as exc:
        report.aborted, report.error = True, str(exc)
    report.wall_time = max(clock() - t0, 0.0)
    report.clock_reads = reads
    if traffic is not None:
        report.messages_sent, report.messages_dropped = traffic()
    return report


def run_workers(
    policy: SyncPolicy | AsyncMode,
    group: WorkerGroup,
    update_fns: list[UpdateFn],
    duration: float,
    **kwargs,
) -> list[RunReport]:
    """Run one thread per entry of ``update_fns`` (one per local worker)."""
    if len(update_fns) != group.num_threads:
        raise ConfigurationError(f"{len(update_fns)} update functions for {group.num_threads} threads")
    reports: list[RunReport | None] = [None] * len(update_fns)
    errors: list[BaseException] = []

    def work(i: int) -> None:
        try:
            reports[i] = run(policy, group, update_fns[i], duration, **kwargs)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(i,), name=f"worker-{i}") for i in range(len(update_fns))]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return reports  # type: ignore[return-value]
