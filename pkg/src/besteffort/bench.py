"""Graph-coloring benchmark harness.

One process per rank, ``threads_per_proc`` worker threads per process, each
worker owning a contiguous block of ``nodes_per_cpu`` nodes of a torus.
Every replicate rebuilds the channels, runs the configured asynchronicity
mode for ``duration_s`` seconds, then gathers final colors and per-worker
records on rank 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
import socket
import threading
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .coloring import ColoringNode, count_conflicts, gather_colors, initial_color, node_update
from .errors import BarrierError, BestEffortError, ConfigurationError
from .sync import AsyncMode, RunReport, SyncPolicy, WorkerGroup, run
from .topology import (
    Assignment,
    NodeBundle,
    Topology,
    assign_striped,
    instantiate,
    make_toroidal_grid,
)
from .transport import ProcessComm

_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def replicate_seed(seed: int, replicate: int) -> int:
    return splitmix64(splitmix64(seed) ^ replicate)


@dataclass
class BenchConfig:
    mode: AsyncMode = AsyncMode.BARRIER_EVERY_UPDATE
    num_procs: int = 1
    threads_per_proc: int = 1
    nodes_per_cpu: int = 2048
    duration_s: float = 5.0
    replicates: int = 5
    colors: int = 3
    b: float = 0.1
    chunk_ms: float = 10.0
    epoch_s: float = 1.0
    seed: int = 0
    skew_epochs: bool = False
    inject_delay_ms: float = 0.0
    capacity: int = 64
    start_delay_s: float = 1.0
    barrier_timeout_s: float = 30.0
    max_updates: int | None = None

    def __post_init__(self) -> None:
        self.mode = AsyncMode(self.mode)
        if not 0 < self.b < 1:
            raise ConfigurationError(f"b must be in (0, 1), got {self.b}")
        if self.colors < 2:
            raise ConfigurationError(f"need at least 2 colors, got {self.colors}")
        for name in ("num_procs", "threads_per_proc", "nodes_per_cpu", "replicates", "capacity"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.duration_s <= 0 or self.chunk_ms <= 0 or self.epoch_s <= 0:
            raise ConfigurationError("durations must be positive")
        if self.inject_delay_ms < 0:
            raise ConfigurationError("inject delay cannot be negative")
        if not 0 <= self.seed <= _MASK64:
            raise ConfigurationError("seed must fit in 64 bits")

    @property
    def cpus(self) -> int:
        return self.num_procs * self.threads_per_proc

    @property
    def policy(self) -> SyncPolicy:
        return SyncPolicy(self.mode, self.chunk_ms / 1000.0, self.epoch_s, self.skew_epochs)


@dataclass
class BenchmarkRecord:
    mode: int
    num_procs: int
    threads_per_proc: int
    replicate: int
    rank: int
    thread: int
    updates_completed: int
    wall_time_s: float
    update_rate: float
    conflicts: int | None
    messages_sent: int
    messages_dropped: int
    hostname: str
    software_version: str
    seed: int
    aborted: bool = False


RECORD_FIELDS = [f.name for f in fields(BenchmarkRecord)]
_INT_FIELDS = {
    "mode", "num_procs", "threads_per_proc", "replicate", "rank", "thread",
    "updates_completed", "messages_sent", "messages_dropped", "seed",
}
_FLOAT_FIELDS = {"wall_time_s", "update_rate"}


def torus_shape(nodes_per_cpu: int, cpus: int) -> tuple[int, int]:
    """Width and height of the benchmark torus.

    The width is the largest divisor of ``nodes_per_cpu`` not above its
    square root, so each cpu's block of ids is a band of whole rows.
    """
    width = max(d for d in range(1, math.isqrt(nodes_per_cpu) + 1) if nodes_per_cpu % d == 0)
    if width < 3:
        width = nodes_per_cpu
    height = nodes_per_cpu * cpus // width
    if width < 3 or height < 3:
        raise ConfigurationError(
            f"{nodes_per_cpu} nodes per cpu on {cpus} cpus does not make a torus of at least 3x3"
        )
    return width, height


def build_layout(config: BenchConfig) -> tuple[Topology, Assignment]:
    w, h = torus_shape(config.nodes_per_cpu, config.cpus)
    topo = make_toroidal_grid(w, h)
    return topo, assign_striped(topo, config.num_procs, config.threads_per_proc, config.nodes_per_cpu)


class DelayInjector:
    """Stalls one worker, chosen uniformly at random, for ``delay_s`` on each update index.

    The choice is hashed from ``(seed, update_index)``, so every worker
    agrees on it without communicating and reruns stall identically.
    """

    def __init__(self, seed: int, num_workers: int, worker: int, delay_s: float) -> None:
        self.seed = splitmix64(seed ^ 0xD1B54A32D192ED03)
        self.num_workers = num_workers
        self.worker = worker
        self.delay_s = delay_s

    def chosen(self, update_index: int) -> int:
        return splitmix64(self.seed ^ update_index) % self.num_workers

    def __call__(self, update_index: int) -> None:
        if self.chosen(update_index) == self.worker:
            time.sleep(self.delay_s)


class ColoringWorker:
    """The nodes and channel bundles of one worker thread."""

    def __init__(
        self,
        bundles: Sequence[NodeBundle],
        seed: int,
        colors: int,
        b: float,
        injector: DelayInjector | None = None,
    ) -> None:
        self.bundles = list(bundles)
        self.b = b
        self.injector = injector
        self.nodes = []
        for bundle in self.bundles:
            node = ColoringNode.create(bundle.node, seed, colors)
            node.last_seen = [o.peek() for o in bundle.outlets]
            self.nodes.append(node)
        self._work = [(n, bd.outlets, bd.inlets) for n, bd in zip(self.nodes, self.bundles)]
        self._cross = [i for bd in self.bundles for i in bd.cross_cpu_inlets()]
        self.updates = 0

    def update(self, communicate: bool = True) -> None:
        b = self.b
        for node, outlets, inlets in self._work:
            node_update(node, outlets, inlets, b, communicate)
        if self.injector is not None:
            self.injector(self.updates)
        self.updates += 1

    def publish(self) -> None:
        """Send every node's color on every outgoing channel, cross-cpu ones included."""
        for node, _, inlets in self._work:
            for inlet in inlets:
                inlet.try_put(node.color)

    def refresh(self) -> None:
        for node, outlets, _ in self._work:
            seen = node.last_seen
            for i, outlet in enumerate(outlets):
                seen[i] = outlet.jump().payload

    def traffic(self) -> tuple[int, int]:
        sent = sum(i.channel.counters.puts_attempted for i in self._cross)
        dropped = sum(i.channel.counters.puts_dropped for i in self._cross)
        return sent, dropped

    def colors(self) -> dict[int, int]:
        return {n.id: n.color for n in self.nodes}


def _record(config: BenchConfig, replicate: int, rank: int, thread: int, report: RunReport | None) -> BenchmarkRecord:
    r = report or RunReport(config.mode, aborted=True)
    return BenchmarkRecord(
        mode=int(config.mode),
        num_procs=config.num_procs,
        threads_per_proc=config.threads_per_proc,
        replicate=replicate,
        rank=rank,
        thread=thread,
        updates_completed=r.updates_completed,
        wall_time_s=r.wall_time,
        update_rate=r.update_rate,
        conflicts=None,
        messages_sent=r.messages_sent,
        messages_dropped=r.messages_dropped,
        hostname=socket.gethostname(),
        software_version=__version__,
        seed=config.seed,
        aborted=r.aborted,
    )


def benchmark_run(
    config: BenchConfig,
    comm: ProcessComm | None = None,
    group: WorkerGroup | None = None,
) -> list[BenchmarkRecord]:
    """Run all replicates for this process.

    Rank 0 returns the records of every worker on every rank (with the
    replicate's conflict count on its own thread-0 record); other ranks
    return only their own records.
    """
    rank = comm.rank if comm is not None else 0
    if config.num_procs > 1 and comm is None:
        raise ConfigurationError("multi-process runs need a ProcessComm")
    topo, assignment = build_layout(config)
    if group is None:
        group = WorkerGroup(
            config.threads_per_proc,
            comm,
            config.num_procs,
            timeout=config.barrier_timeout_s,
            start_delay=config.start_delay_s,
        )
    out: list[BenchmarkRecord] = []
    for rep in range(config.replicates):
        out.extend(_replicate(config, rep, topo, assignment, rank, comm, group))
    return out


def _replicate(
    config: BenchConfig,
    rep: int,
    topo: Topology,
    assignment: Assignment,
    rank: int,
    comm: ProcessComm | None,
    group: WorkerGroup,
) -> list[BenchmarkRecord]:
    T = config.threads_per_proc
    seed = replicate_seed(config.seed, rep)
    try:
        wiring = instantiate(
            topo,
            assignment,
            rank,
            comm,
            lambda src: initial_color(seed, src, config.colors),
            capacity=config.capacity,
            namespace=rep,
        )
    except BestEffortError:
        return [_record(config, rep, rank, t, None) for t in range(T)]

    workers = []
    for t in range(T):
        injector = None
        if config.inject_delay_ms > 0:
            injector = DelayInjector(seed, config.cpus, rank * T + t, config.inject_delay_ms / 1000.0)
        workers.append(ColoringWorker(wiring.bundles_for_thread(t), seed, config.colors, config.b, injector))

    results: list[list[BenchmarkRecord]] = [[] for _ in range(T)]

    def work(t: int) -> None:
        w = workers[t]
        report = run(
            config.policy,
            group,
            w.update,
            config.duration_s,
            max_updates=config.max_updates,
            traffic=w.traffic,
        )
        rec = _record(config, rep, rank, t, report)
        try:
            if config.mode is AsyncMode.NO_COMM and not rec.aborted:
                # one synchronous exchange so cached neighbor colors are current
                group.barrier()
                w.publish()
                group.barrier()
                w.refresh()
            final = gather_colors(group, w.colors())
            gathered = group.gather(json.dumps(asdict(rec)).encode())
        except BarrierError:
            rec.aborted = True
            results[t] = [rec]
            return
        if gathered is None or t != 0:
            results[t] = [rec] if gathered is None else []
            return
        records = [
            BenchmarkRecord(**json.loads(body))
            for r in sorted(gathered)
            for body in gathered[r]
        ]
        records.sort(key=lambda x: (x.rank, x.thread))
        if final is not None and len(final) == topo.node_count:
            records[0].conflicts = count_conflicts(topo, final)
        else:
            records[0].aborted = True
        results[t] = records

    if T == 1:
        work(0)
    else:
        threads = [threading.Thread(target=work, args=(t,), name=f"worker-{t}") for t in range(T)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
    wiring.release()
    if any(r.aborted for recs in results for r in recs):
        group.reset()
    return [r for recs in results for r in recs]


def coloring_trajectory(
    config: BenchConfig,
    replicate: int = 0,
    max_updates: int = 100_000,
    time_budget_s: float | None = None,
    stop_at_zero: bool = True,
) -> list[int]:
    """Conflict count after each update of a single-cpu mode-0 run.

    The run ends at ``max_updates`` updates, at the first zero-conflict
    state when ``stop_at_zero``, or after ``time_budget_s`` seconds.
    """
    if config.cpus != 1:
        raise ConfigurationError("trajectories are recorded for single-cpu runs only")
    topo, assignment = build_layout(config)
    seed = replicate_seed(config.seed, replicate)
    wiring = instantiate(topo, assignment, 0, None, lambda s: initial_color(seed, s, config.colors), capacity=config.capacity)
    worker = ColoringWorker(wiring.bundles_for_thread(0), seed, config.colors, config.b)
    trajectory: list[int] = []
    nodes = worker.nodes

    solved = False

    def step(communicate: bool) -> None:
        nonlocal solved
        worker.update(communicate)
        c = count_conflicts(topo, [n.color for n in nodes])
        trajectory.append(c)
        solved = stop_at_zero and c == 0

    group = WorkerGroup(1, start_delay=0.0)
    budget = time_budget_s if time_budget_s is not None else float("inf")
    run(AsyncMode.BARRIER_EVERY_UPDATE, group, step, budget, max_updates=max_updates, until=lambda: solved)
    return trajectory


def summarize(records: Iterable[BenchmarkRecord], seed: int = 0) -> dict[int, dict[str, object]]:
    """Per-mode bootstrapped CIs of per-worker update rate and per-replicate conflicts."""
    from .stats import bootstrap_ci

    by_mode: dict[int, list[BenchmarkRecord]] = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append(r)
    out: dict[int, dict[str, object]] = {}
    for mode, recs in sorted(by_mode.items()):
        rates = [r.update_rate for r in recs if not r.aborted]
        conflicts = [r.conflicts for r in recs if r.conflicts is not None]
        entry: dict[str, object] = {}
        if rates:
            entry["update_rate"] = bootstrap_ci(rates, seed=seed, metric="update_rate")
        if conflicts:
            entry["conflicts"] = bootstrap_ci(conflicts, seed=seed, metric="conflicts")
        out[mode] = entry
    return out


def emit_records(records: Sequence[BenchmarkRecord], path: str | Path | None, fmt: str = "csv") -> None:
    """Write records as CSV (header + one row each) or a JSON array.

    ``path`` of None or ``"-"`` writes to stdout.
    """
    text = format_records(records, fmt)
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(path).write_text(text)


def format_records(records: Sequence[BenchmarkRecord], fmt: str = "csv") -> str:
    rows = [asdict(r) for r in records]
    if fmt == "json":
        return json.dumps(rows, indent=1) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    return buf.getvalue()


def parse_records(text: str, fmt: str = "csv") -> list[BenchmarkRecord]:
    if fmt == "json":
        return [BenchmarkRecord(**row) for row in json.loads(text)]
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames != RECORD_FIELDS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        values: dict[str, object] = {}
        for k, v in row.items():
            if k in _INT_FIELDS:
                values[k] = int(v)
            elif k in _FLOAT_FIELDS:
                values[k] = float(v)
            elif k == "conflicts":
                values[k] = int(v) if v != "" else None
            elif k == "aborted":
                values[k] = v == "True"
            else:
                values[k] = v
        out.append(BenchmarkRecord(**values))
    return out


def read_records(path: str | Path, fmt: str = "csv") -> list[BenchmarkRecord]:
    return parse_records(Path(path).read_text(), fmt)

