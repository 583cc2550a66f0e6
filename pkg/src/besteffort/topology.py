"""Simulation-element graphs and their placement onto (rank, thread) slots.

Wiring is deterministic so that independent processes agree on it without
talking: channel ids are edge indices in sorted ``(src, dst)`` order, a
node's neighbors are listed in ascending id order, and pool members are
ordered by channel id.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .channel import Channel, Inlet, Outlet
from .consolidation import Pool, PoolReceiver, PoolSlotDuct, comm_sender
from .ducts import DEFAULT_CAPACITY, DEFAULT_PAYLOAD_FORMAT, BackendKind, PayloadCodec, RecvDuct
from .errors import ConfigurationError, LoadError, SetupError
from .transport import CONTROL_BASE, POOL_BASE, ProcessComm

Slot = tuple[int, int]


@dataclass(frozen=True)
class Topology:
    """Directed graph with dense node ids and a duplicate-free, sorted edge list."""

    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ConfigurationError("a topology needs at least one node")
        edges = tuple(sorted(set(self.edges)))
        if len(edges) != len(self.edges):
            raise ConfigurationError("duplicate edges")
        for s, d in edges:
            if not (0 <= s < self.node_count and 0 <= d < self.node_count):
                raise ConfigurationError(f"edge ({s}, {d}) outside [0, {self.node_count})")
        object.__setattr__(self, "edges", edges)

    def out_neighbors(self, node: int) -> list[int]:
        return [d for s, d in self.edges if s == node]

    def in_neighbors(self, node: int) -> list[int]:
        return sorted(s for s, d in self.edges if d == node)

    def adjacency(self) -> tuple[list[list[int]], list[list[int]]]:
        """(out-neighbors, in-neighbors) for every node, ascending."""
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        inn: list[list[int]] = [[] for _ in range(self.node_count)]
        for s, d in self.edges:
            out[s].append(d)
            inn[d].append(s)
        for lst in inn:
            lst.sort()
        return out, inn

    def channel_ids(self) -> dict[tuple[int, int], int]:
        return {e: i for i, e in enumerate(self.edges)}


def make_toroidal_grid(width: int, height: int) -> Topology:
    """4-neighbor torus; node ``y * width + x``, edges both ways to each neighbor."""
    if width < 3 or height < 3:
        raise ConfigurationError(f"torus needs width, height >= 3, got {width}x{height}")
    edges = []
    for y in range(height):
        for x in range(width):
            n = y * width + x
            for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
                edges.append((n, (ny % height) * width + nx % width))
    return Topology(width * height, tuple(edges))


def load_edge_list(path: str | os.PathLike) -> Topology:
    """Read whitespace-separated ``src dst`` pairs; ``#`` starts a comment."""
    edges = []
    seen = set()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise LoadError(f"expected 'src dst', got {raw!r}", lineno)
        try:
            s, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise LoadError(f"non-integer node id in {raw!r}", lineno) from None
        if s < 0 or d < 0:
            raise LoadError(f"negative node id in {raw!r}", lineno)
        if (s, d) in seen:
            raise LoadError(f"duplicate edge ({s}, {d})", lineno)
        seen.add((s, d))
        edges.append((s, d))
    if not edges:
        raise LoadError("edge list is empty")
    node_count = max(max(s, d) for s, d in edges) + 1
    return Topology(node_count, tuple(edges))


def save_edge_list(topology: Topology, path: str | os.PathLike) -> None:
    lines = [f"# {topology.node_count} nodes, {len(topology.edges)} edges"]
    lines += [f"{s} {d}" for s, d in topology.edges]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class Assignment:
    """Total mapping of node id to ``(rank, thread)``."""

    placement: tuple[Slot, ...]
    num_procs: int
    threads_per_proc: int

    def __post_init__(self) -> None:
        if self.num_procs < 1 or self.threads_per_proc < 1:
            raise ConfigurationError("need at least one process and one thread")
        for node, (r, t) in enumerate(self.placement):
            if not (0 <= r < self.num_procs and 0 <= t < self.threads_per_proc):
                raise ConfigurationError(f"node {node} placed on out-of-range slot ({r}, {t})")

    def slot(self, node: int) -> Slot:
        return self.placement[node]

    def nodes_on(self, rank: int, thread: int | None = None) -> list[int]:
        return [
            n
            for n, (r, t) in enumerate(self.placement)
            if r == rank and (thread is None or t == thread)
        ]


def assign_striped(
    topology: Topology, num_procs: int, threads_per_proc: int, nodes_per_cpu: int
) -> Assignment:
    """Contiguous blocks of ``nodes_per_cpu`` ids per slot, ranks then threads."""
    expected = num_procs * threads_per_proc * nodes_per_cpu
    if topology.node_count != expected:
        raise ConfigurationError(
            f"{topology.node_count} nodes cannot fill {num_procs} x {threads_per_proc} x {nodes_per_cpu}"
        )
    placement = []
    for n in range(topology.node_count):
        cpu = n // nodes_per_cpu
        placement.append(divmod(cpu, threads_per_proc))
    return Assignment(tuple(placement), num_procs, threads_per_proc)


def load_partition(
    path: str | os.PathLike,
    topology: Topology,
    num_procs: int | None = None,
    threads_per_proc: int | None = None,
) -> Assignment:
    """Read one ``rank thread`` line per node id (comments allowed).

    Slot bounds default to the largest rank/thread seen plus one.
    """
    placement: list[Slot] = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise LoadError(f"expected 'rank thread', got {raw!r}", lineno)
        try:
            r, t = int(parts[0]), int(parts[1])
        except ValueError:
            raise LoadError(f"non-integer slot in {raw!r}", lineno) from None
        if r < 0 or t < 0:
            raise LoadError(f"negative slot in {raw!r}", lineno)
        if num_procs is not None and r >= num_procs:
            raise LoadError(f"rank {r} out of range [0, {num_procs})", lineno)
        if threads_per_proc is not None and t >= threads_per_proc:
            raise LoadError(f"thread {t} out of range [0, {threads_per_proc})", lineno)
        placement.append((r, t))
    if len(placement) != topology.node_count:
        raise LoadError(f"partition has {len(placement)} entries for {topology.node_count} nodes")
    procs = num_procs if num_procs is not None else max(r for r, _ in placement) + 1
    threads = threads_per_proc if threads_per_proc is not None else max(t for _, t in placement) + 1
    return Assignment(tuple(placement), procs, threads)


def save_partition(assignment: Assignment, path: str | os.PathLike) -> None:
    Path(path).write_text("".join(f"{r} {t}\n" for r, t in assignment.placement))


def select_backend(src: Slot, dst: Slot) -> BackendKind:
    if src[0] != dst[0]:
        return BackendKind.INTER_PROCESS
    if src[1] != dst[1]:
        return BackendKind.INTER_THREAD
    return BackendKind.INTRA_THREAD


def pool_channel_id(
    src_rank: int, src_thread: int, dst_rank: int, num_procs: int, threads_per_proc: int, namespace: int = 0
) -> int:
    """Channel id for the pool from ``(src_rank, src_thread)`` to ``dst_rank``."""
    per_namespace = num_procs * threads_per_proc * num_procs
    capacity = (CONTROL_BASE - POOL_BASE) // per_namespace
    ns = namespace % capacity
    return POOL_BASE + ns * per_namespace + (src_rank * threads_per_proc + src_thread) * num_procs + dst_rank


@dataclass
class NodeBundle:
    """Endpoints owned by one node; lists are in ascending neighbor id order."""

    node: int
    slot: Slot
    out_neighbors: list[int] = field(default_factory=list)
    inlets: list[Inlet] = field(default_factory=list)
    in_neighbors: list[int] = field(default_factory=list)
    outlets: list[Outlet] = field(default_factory=list)

    def cross_cpu_inlets(self) -> list[Inlet]:
        return [i for i in self.inlets if i.channel.kind is not BackendKind.INTRA_THREAD]


@dataclass
class Wiring:
    """Result of :func:`instantiate` for one rank."""

    rank: int
    bundles: dict[int, NodeBundle]
    channels: dict[int, Channel]
    pools: dict[tuple[int, int], Pool]
    receivers: dict[int, PoolReceiver]
    comm: ProcessComm | None = None

    def bundles_for_thread(self, thread: int) -> list[NodeBundle]:
        return [b for n, b in sorted(self.bundles.items()) if b.slot[1] == thread]

    def release(self) -> None:
        """Stop routing this wiring's pool frames (late arrivals are discarded)."""
        if self.comm is not None:
            self.comm.unregister_many(self.receivers)


def instantiate(
    topology: Topology,
    assignment: Assignment,
    self_rank: int,
    comm: ProcessComm | None,
    defaults: Callable[[int], Any] | Mapping[int, Any] | Any,
    *,
    capacity: int = DEFAULT_CAPACITY,
    payload_format: str = DEFAULT_PAYLOAD_FORMAT,
    namespace: int = 0,
) -> Wiring:
    """Create every channel endpoint that lives on ``self_rank``.

    Each edge gets a duct chosen by :func:`select_backend`. Cross-rank edges
    are pooled: one pool per (sending thread, destination rank), members in
    channel-id order, so a matching :class:`PoolReceiver` can be built on the
    other side from the same inputs.

    Args:
        defaults: default payload of an edge's outlet, keyed by the edge's
            source node (callable, mapping, or one value for all).
        namespace: salts pool ids so frames from an earlier wiring are not
            mistaken for this one's.

    Raises:
        SetupError: a peer rank needed by a cross-rank edge is unreachable.
    """
    if len(assignment.placement) != topology.node_count:
        raise ConfigurationError("assignment does not cover the topology")
    if callable(defaults):
        default_of = defaults
    elif isinstance(defaults, Mapping):
        default_of = defaults.__getitem__
    else:
        default_of = lambda _node, _v=defaults: _v  # noqa: E731

    P, T = assignment.num_procs, assignment.threads_per_proc
    slot = assignment.slot
    out_adj, in_adj = topology.adjacency()
    ids = topology.channel_ids()
    codec = PayloadCodec(payload_format)

    bundles = {n: NodeBundle(n, slot(n)) for n in range(topology.node_count) if slot(n)[0] == self_rank}
    channels: dict[int, Channel] = {}

    # send side of cross-rank edges: (src_thread, dst_rank) -> [channel ids]
    send_groups: dict[tuple[int, int], list[int]] = {}
    # receive side: (src_rank, src_thread) -> [channel ids]
    recv_groups: dict[tuple[int, int], list[int]] = {}
    peers: set[int] = set()

    for cid, (s, d) in enumerate(topology.edges):
        ss, ds = slot(s), slot(d)
        if ss[0] != self_rank and ds[0] != self_rank:
            continue
        kind = select_backend(ss, ds)
        if kind is BackendKind.INTER_PROCESS:
            if ss[0] == self_rank:
                send_groups.setdefault((ss[1], ds[0]), []).append(cid)
                peers.add(ds[0])
            else:
                recv_groups.setdefault(ss, []).append(cid)
                peers.add(ss[0])
            continue
        channels[cid] = Channel(default_of(s), capacity, kind)

    if peers:
        if comm is None:
            raise SetupError(f"cross-rank edges to ranks {sorted(peers)} need a transport")
        unreachable = sorted(p for p in peers if not comm.is_reachable(p))
        if unreachable:
            raise SetupError(f"rank {self_rank} cannot reach ranks {unreachable}")

    pools: dict[tuple[int, int], Pool] = {}
    for (src_thread, dst_rank), cids in sorted(send_groups.items()):
        pid = pool_channel_id(self_rank, src_thread, dst_rank, P, T, namespace)
        pool = Pool(comm_sender(comm, dst_rank), pid, len(cids), codec)
        pools[(src_thread, dst_rank)] = pool
        for member, cid in enumerate(cids):
            s, _ = topology.edges[cid]
            channels[cid] = Channel(default_of(s), capacity, duct=PoolSlotDuct(pool, member))

    receivers: dict[int, PoolReceiver] = {}
    for (src_rank, src_thread), cids in sorted(recv_groups.items()):
        pid = pool_channel_id(src_rank, src_thread, self_rank, P, T, namespace)
        sinks = []
        for cid in cids:
            s, _ = topology.edges[cid]
            duct = RecvDuct(comm, capacity, codec)
            channels[cid] = Channel(default_of(s), capacity, duct=duct)
            sinks.append(duct)
        receiver = PoolReceiver(pid, sinks)
        receivers[pid] = receiver
        comm.register(pid, receiver.handler)

    for n, bundle in bundles.items():
        for d in out_adj[n]:
            bundle.out_neighbors.append(d)
            bundle.inlets.append(channels[ids[(n, d)]].inlet)
        for s in in_adj[n]:
            bundle.in_neighbors.append(s)
            bundle.outlets.append(channels[ids[(s, n)]].outlet)

    return Wiring(self_rank, bundles, channels, pools, receivers, comm)


def edges_crossing(topology: Topology, assignment: Assignment) -> list[tuple[int, int]]:
    """Edges whose endpoints sit on different ranks."""
    return [(s, d) for s, d in topology.edges if assignment.slot(s)[0] != assignment.slot(d)[0]]

