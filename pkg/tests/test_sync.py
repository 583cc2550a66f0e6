import threading
import time

import pytest

from besteffort.errors import BarrierError, ConfigurationError
from besteffort.sync import (
    AsyncMode,
    SyncPolicy,
    WorkerGroup,
    barrier,
    negotiate_start_epoch,
    run,
    run_workers,
)
from besteffort.transport import LoopbackHub, ProcessComm


def ranks(n, threads=1, **kw):
    hub = LoopbackHub()
    return [WorkerGroup(threads, ProcessComm(t), n, **kw) for t in hub.endpoints(n)]


def spawn(fns):
    out = [None] * len(fns)
    errs = []

    def go(i):
        try:
            out[i] = fns[i]()
        except BaseException as exc:
            errs.append(exc)

    ts = [threading.Thread(target=go, args=(i,)) for i in range(len(fns))]
    for t in ts:
        t.start()
    for t in ts:
        t.join(60)
    if errs:
        raise errs[0]
    return out


def test_single_worker_barrier_immediate():
    g = WorkerGroup()
    t0 = time.perf_counter()
    assert barrier(g) is False
    assert barrier(g, True) is True
    assert time.perf_counter() - t0 < 0.05


def test_delayed_thread_holds_everyone():
    g = WorkerGroup(4)
    entered = []

    def worker(i):
        def f():
            if i == 0:
                time.sleep(0.05)
                entered.append(time.perf_counter())
            g.barrier()
            return time.perf_counter()

        return f

    exits = spawn([worker(i) for i in range(4)])
    assert min(exits) >= entered[0]


def test_two_ranks_two_threads_release_once_per_call():
    groups = ranks(2, threads=2)
    calls = 20
    releases = [[0] * calls for _ in range(2)]
    lock = threading.Lock()

    def worker(r):
        def f():
            for k in range(calls):
                groups[r].barrier()
                with lock:
                    releases[r][k] += 1

        return f

    spawn([worker(0), worker(0), worker(1), worker(1)])
    assert releases == [[2] * calls, [2] * calls]
    assert [g.completed for g in groups] == [calls, calls]


def test_stop_vote_reaches_every_rank():
    groups = ranks(3)
    votes = spawn([lambda g=g, i=i: g.barrier(i == 2) for i, g in enumerate(groups)])
    assert votes == [True, True, True]


def test_negotiated_start():
    g = WorkerGroup()
    now = time.time()
    t0 = negotiate_start_epoch(g)
    assert now + 0.9 < t0 < now + 1.5
    groups = ranks(2, start_delay=0.5)
    t = spawn([g.negotiate_start for g in groups])
    assert t[0] == t[1]


def test_gather_on_rank0_only():
    groups = ranks(2, threads=2)
    out = spawn([lambda r=r, i=i: groups[r].gather(f"{r}{i}".encode()) for r in range(2) for i in range(2)])
    assert out[2] is None and out[3] is None
    assert out[0] == out[1]
    assert {k: sorted(v) for k, v in out[0].items()} == {0: [b"00", b"01"], 1: [b"10", b"11"]}


def test_barrier_timeout():
    g = WorkerGroup(2, timeout=0.1)
    with pytest.raises(BarrierError):
        g.barrier()
    g.reset()


def test_peer_disconnect_raises():
    hub = LoopbackHub()
    t0, t1 = hub.endpoints(2)
    g = WorkerGroup(1, ProcessComm(t0), 2, timeout=5)
    t1.close()
    start = time.monotonic()
    with pytest.raises(BarrierError):
        g.barrier()
    assert time.monotonic() - start < 1


def test_group_validation():
    with pytest.raises(ConfigurationError):
        WorkerGroup(0)
    with pytest.raises(ConfigurationError):
        WorkerGroup(1, None, 2)
    with pytest.raises(ConfigurationError):
        SyncPolicy(AsyncMode.ROLLING_BARRIER, chunk_s=0)
    with pytest.raises(ConfigurationError):
        SyncPolicy(AsyncMode.FIXED_BARRIER, epoch_s=-1)
    with pytest.raises(ValueError):
        AsyncMode(5)


def counter():
    calls = []
    return calls, lambda communicate: calls.append(communicate)


def test_mode0_one_barrier_per_update():
    calls, fn = counter()
    r = run(AsyncMode.BARRIER_EVERY_UPDATE, WorkerGroup(start_delay=0), fn, 10, max_updates=100)
    assert r.updates_completed == 100 == r.barriers_executed
    assert all(calls)


def test_mode3_no_barriers_and_clock_reads():
    calls, fn = counter()
    r = run(AsyncMode.NO_BARRIER, WorkerGroup(start_delay=0), fn, 10, max_updates=50)
    assert r.barriers_executed == 0 and r.updates_completed == 50
    assert r.clock_reads == 51


def test_mode4_disables_communication():
    calls, fn = counter()
    r = run(AsyncMode.NO_COMM, WorkerGroup(start_delay=0), fn, 10, max_updates=5, traffic=lambda: (0, 0))
    assert calls == [False] * 5 and r.messages_sent == 0


def test_mode1_chunks():
    def slow(_):
        time.sleep(0.002)

    r = run(SyncPolicy(AsyncMode.ROLLING_BARRIER, chunk_s=0.02), WorkerGroup(start_delay=0), slow, 0.3)
    assert 0 < r.barriers_executed < r.updates_completed
    assert r.barriers_executed <= 0.3 / 0.02 + 2


def test_duration_and_start_delay():
    calls, fn = counter()
    t0 = time.monotonic()
    r = run(AsyncMode.NO_BARRIER, WorkerGroup(start_delay=0.2), fn, 0.2)
    elapsed = time.monotonic() - t0
    assert 0.39 < elapsed < 0.8
    assert 0.2 <= r.wall_time < 0.4


def test_until_stops_all_workers_together():
    g = WorkerGroup(3, start_delay=0)
    counts = [0, 0, 0]

    def make(i):
        def f(_):
            counts[i] += 1

        return f

    reports = run_workers(AsyncMode.BARRIER_EVERY_UPDATE, g, [make(i) for i in range(3)], 10, until=lambda: counts[0] >= 7)
    assert [r.updates_completed for r in reports] == [7, 7, 7]


def test_mode2_equal_barrier_counts_across_ranks():
    groups = ranks(2, start_delay=0.1)
    policy = SyncPolicy(AsyncMode.FIXED_BARRIER, epoch_s=0.2)

    def worker(g, cost):
        return lambda: run(policy, g, lambda _: time.sleep(cost), 1.0)

    reports = spawn([worker(groups[0], 0.001), worker(groups[1], 0.013)])
    counts = [r.barriers_executed for r in reports]
    assert counts[0] == counts[1] and counts[0] in (4, 5)


def test_skew_epochs_skips_negotiation():
    # a 2-thread group would block on negotiation; skewed runs never call it
    g = WorkerGroup(2, timeout=0.2)
    calls, fn = counter()
    r = run(SyncPolicy(AsyncMode.NO_BARRIER, skew_epochs=True), g, fn, 0.05)
    assert not r.aborted and r.updates_completed > 0


def test_barrier_failure_aborts_with_partial_report():
    g = WorkerGroup(2, timeout=0.1, start_delay=0)
    calls, fn = counter()
    r = run(AsyncMode.BARRIER_EVERY_UPDATE, g, fn, 1)
    assert r.aborted and r.error
