import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from besteffort import BackendKind
from besteffort.errors import ConfigurationError, LoadError, SetupError
from besteffort.topology import (
    Assignment,
    Topology,
    assign_striped,
    edges_crossing,
    instantiate,
    load_edge_list,
    load_partition,
    make_toroidal_grid,
    pool_channel_id,
    save_edge_list,
    save_partition,
    select_backend,
)
from besteffort.transport import CONTROL_BASE, POOL_BASE, LoopbackHub, ProcessComm

from oracles import torus_edges


@given(st.integers(3, 12), st.integers(3, 12))
def test_torus_matches_coordinate_oracle(w, h):
    t = make_toroidal_grid(w, h)
    assert t.node_count == w * h
    assert set(t.edges) == torus_edges(w, h)
    assert len(t.edges) == 4 * w * h
    assert all((d, s) in set(t.edges) for s, d in t.edges)
    assert all(s != d for s, d in t.edges)


def test_3x3_counts():
    t = make_toroidal_grid(3, 3)
    out, _ = t.adjacency()
    assert t.node_count == 9 and len(t.edges) == 36
    assert all(len(o) == 4 for o in out)


def test_4x4_node0_neighbors():
    t = make_toroidal_grid(4, 4)
    assert set(t.out_neighbors(0)) == {1, 3, 4, 12}
    assert t.out_neighbors(0) == [1, 3, 4, 12]


@pytest.mark.parametrize("w,h", [(2, 2), (2, 5), (5, 1)])
def test_small_torus_rejected(w, h):
    with pytest.raises(ConfigurationError):
        make_toroidal_grid(w, h)


def test_duplicate_edges_rejected():
    with pytest.raises(ConfigurationError):
        Topology(2, ((0, 1), (0, 1)))


def test_edge_list_basic(tmp_path):
    p = tmp_path / "g.txt"
    p.write_text("# two nodes\n0 1\n1 0   # back\n\n")
    t = load_edge_list(p)
    assert t.node_count == 2 and t.edges == ((0, 1), (1, 0))


def test_edge_list_roundtrip(tmp_path):
    t = make_toroidal_grid(5, 4)
    p = tmp_path / "g.txt"
    save_edge_list(t, p)
    assert load_edge_list(p) == t


@pytest.mark.parametrize(
    "text,line",
    [("0 1\n-1 2\n", 2), ("0 1\n0 x\n", 2), ("0 1 2\n", 1), ("0 1\n# c\n0 1\n", 3)],
)
def test_edge_list_errors(tmp_path, text, line):
    p = tmp_path / "g.txt"
    p.write_text(text)
    with pytest.raises(LoadError) as exc:
        load_edge_list(p)
    assert exc.value.line == line


def test_striped():
    t = Topology(8, tuple((i, (i + 1) % 8) for i in range(8)))
    a = assign_striped(t, 2, 1, 4)
    assert a.nodes_on(0) == [0, 1, 2, 3] and a.nodes_on(1) == [4, 5, 6, 7]
    t2 = make_toroidal_grid(3, 3)
    with pytest.raises(ConfigurationError):
        assign_striped(t2, 2, 1, 4)


def test_striped_threads_within_rank():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 2, 4)
    assert [a.slot(n) for n in (0, 4, 8, 12)] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_partition_matches_striped(tmp_path):
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 2, 4)
    p = tmp_path / "part.txt"
    save_partition(a, p)
    assert load_partition(p, t) == a
    assert load_partition(p, t, 2, 2) == a


def test_partition_errors(tmp_path):
    t = make_toroidal_grid(3, 3)
    p = tmp_path / "part.txt"
    p.write_text("0 0\n" * 8)
    with pytest.raises(LoadError):
        load_partition(p, t)
    p.write_text("0 0\n" * 8 + "3 0\n")
    with pytest.raises(LoadError) as exc:
        load_partition(p, t, num_procs=2)
    assert exc.value.line == 9
    p.write_text("0 0\n" * 9)
    a = load_partition(p, t)
    assert a.num_procs == 1 and a.nodes_on(0, 0) == list(range(9))


def test_select_backend_exhaustive():
    slots = list(itertools.product(range(2), range(2)))
    for s, d in itertools.product(slots, slots):
        kind = select_backend(s, d)
        if s[0] != d[0]:
            assert kind is BackendKind.INTER_PROCESS
        elif s[1] != d[1]:
            assert kind is BackendKind.INTER_THREAD
        else:
            assert kind is BackendKind.INTRA_THREAD


def test_two_nodes_same_thread():
    t = Topology(2, ((0, 1), (1, 0)))
    w = instantiate(t, Assignment(((0, 0), (0, 0)), 1, 1), 0, None, 0)
    assert [c.kind for c in w.channels.values()] == [BackendKind.INTRA_THREAD] * 2


def _wire_all(t, a, defaults=0):
    hub = LoopbackHub()
    comms = [ProcessComm(x) for x in hub.endpoints(a.num_procs)]
    return comms, [instantiate(t, a, r, comms[r], defaults) for r in range(a.num_procs)]


def test_cross_rank_edges_are_stripe_boundaries():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 1, 8)
    crossing = edges_crossing(t, a)
    # rows 0-1 on rank 0, rows 2-3 on rank 1: the 1|2 and 3|0 row boundaries
    expect = set()
    for x in range(4):
        for r0, r1 in ((1, 2), (3, 0)):
            expect |= {(r0 * 4 + x, r1 * 4 + x), (r1 * 4 + x, r0 * 4 + x)}
    assert set(crossing) == expect
    comms, wirings = _wire_all(t, a)
    for r, w in enumerate(wirings):
        pooled = sum(p.size for p in w.pools.values())
        assert pooled == sum(1 for s, d in crossing if a.slot(s)[0] == r)


def test_bundles_pair_up_across_ranks():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 2, 4)
    comms, wirings = _wire_all(t, a, defaults=lambda s: 1000 + s)
    bundles = {n: b for w in wirings for n, b in w.bundles.items()}
    assert sorted(bundles) == list(range(16))
    for n, b in bundles.items():
        assert len(b.inlets) == len(b.outlets) == 4
        assert b.out_neighbors == sorted(b.out_neighbors)
        # outlet defaults identify the sending neighbor
        assert [o.peek() for o in b.outlets] == [1000 + s for s in b.in_neighbors]
    # send each node's id everywhere; every outlet must then show its source
    for n, b in bundles.items():
        for i in b.inlets:
            i.try_put(n)
    for c in comms:
        c.pump()
    for n, b in bundles.items():
        assert [o.jump().payload for o in b.outlets] == b.in_neighbors


def test_channel_ids_deterministic():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 1, 2, 8)
    w1 = instantiate(t, a, 0, None, 0)
    w2 = instantiate(t, a, 0, None, 0)
    assert sorted(w1.channels) == sorted(w2.channels) == list(range(len(t.edges)))
    assert {c: w1.channels[c].kind for c in w1.channels} == {c: w2.channels[c].kind for c in w2.channels}


def test_unreachable_peer_setup_error():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 1, 8)
    hub = LoopbackHub()
    comm = ProcessComm(hub.endpoints(1)[0])
    with pytest.raises(SetupError):
        instantiate(t, a, 0, comm, 0)
    with pytest.raises(SetupError):
        instantiate(t, a, 0, None, 0)


def test_pool_ids_distinct_and_in_range():
    ids = {
        pool_channel_id(r, th, d, 3, 4, ns)
        for r in range(3)
        for th in range(4)
        for d in range(3)
        for ns in range(5)
    }
    assert len(ids) == 3 * 4 * 3 * 5
    assert all(POOL_BASE <= i < CONTROL_BASE for i in ids)


def test_release_unregisters_pools():
    t = make_toroidal_grid(4, 4)
    a = assign_striped(t, 2, 1, 8)
    comms, wirings = _wire_all(t, a)
    for w in wirings:
        w.release()
    for n, b in wirings[0].bundles.items():
        for i in b.inlets:
            i.try_put(1)
    comms[1].pump()
    assert comms[1].unroutable > 0
