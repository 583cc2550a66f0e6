import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from besteffort import BackendKind, Channel
from besteffort.coloring import (
    ColoringNode,
    count_conflicts,
    gather_colors,
    initial_color,
    node_update,
    pack_colors,
    unpack_colors,
    update_probabilities,
)
from besteffort.sync import WorkerGroup
from besteffort.topology import make_toroidal_grid
from besteffort.transport import LoopbackHub, ProcessComm

from oracles import brute_force_conflicts, proportional_update
from test_sync import spawn


def test_worked_example():
    got = update_probabilities([1 / 3] * 3, 0, 0.1)
    assert got == pytest.approx([1 / 30, 29 / 60, 29 / 60], abs=1e-12)
    assert [round(p, 6) for p in got] == [0.033333, 0.483333, 0.483333]


@st.composite
def distributions(draw):
    n = draw(st.integers(2, 6))
    w = [draw(st.floats(0.0, 1.0)) for _ in range(n)]
    cur = draw(st.integers(0, n - 1))
    w[cur] = draw(st.floats(1e-6, 1.0))
    total = sum(w)
    return [x / total for x in w], cur


@given(distributions(), st.floats(0.01, 0.99))
def test_rule_matches_oracle_and_stays_valid(dist, b):
    prob, cur = dist
    got = update_probabilities(prob, cur, b)
    if prob[cur] < 1 - 1e-12:
        assert got == pytest.approx(proportional_update(prob, cur, b), abs=1e-12)
        assert got[cur] < prob[cur]
    assert math.isclose(sum(got), 1.0, abs_tol=1e-9)
    assert min(got) >= 0


def test_degenerate_resets_to_uniform():
    assert update_probabilities([1.0, 0.0, 0.0], 0, 0.1) == [1 / 3] * 3


def test_repeated_updates_stay_valid():
    rng = random.Random(1)
    prob = [0.25] * 4
    for _ in range(5000):
        prob = update_probabilities(prob, rng.randrange(4), 0.1)
        assert abs(sum(prob) - 1) < 1e-9 and min(prob) >= 0


def test_initial_color_is_first_draw():
    for node in range(20):
        n = ColoringNode.create(node, 42, 3)
        assert n.color == initial_color(42, node, 3)
        assert 0 <= n.color < 3
    assert len({initial_color(7, n, 3) for n in range(100)}) == 3


def make_node(color, neighbor_colors):
    node = ColoringNode.create(0, 1, 3)
    node.color = color
    outs = [Channel(c) for c in neighbor_colors]
    ins = [Channel(0) for _ in neighbor_colors]
    node.last_seen = [o.outlet.peek() for o in outs]
    return node, outs, ins


def test_no_conflict_keeps_state_and_sends():
    node, outs, ins = make_node(0, [1, 2, 1, 2])
    before = list(node.prob)
    assert node_update(node, [o.outlet for o in outs], [i.inlet for i in ins]) is False
    assert node.color == 0 and node.prob == before
    assert [i.counters.puts_attempted for i in ins] == [1] * 4
    assert [i.outlet.jump().payload for i in ins] == [0] * 4


def test_fresh_message_overrides_cache():
    node, outs, ins = make_node(0, [1, 2, 1, 2])
    outs[2].inlet.try_put(5)
    outs[2].inlet.try_put(0)
    assert node_update(node, [o.outlet for o in outs], [i.inlet for i in ins]) is True
    assert node.last_seen == [1, 2, 0, 2]
    assert node.prob[0] == pytest.approx(1 / 30)


def test_stale_neighbors_use_cache():
    node, outs, ins = make_node(0, [1, 0, 1, 2])
    assert node_update(node, [o.outlet for o in outs], [i.inlet for i in ins]) is True


def test_no_comm_skips_cross_cpu_channels():
    node = ColoringNode.create(0, 1, 3)
    node.color = 0
    local = Channel(1)
    remote = Channel(0, backend=BackendKind.INTER_THREAD)
    remote.inlet.try_put(2)
    node.last_seen = [1, 0]
    out_local, out_remote = Channel(0), Channel(0, backend=BackendKind.INTER_THREAD)
    node_update(node, [local.outlet, remote.outlet], [out_local.inlet, out_remote.inlet], communicate=False)
    assert remote.buffered == 1
    assert out_remote.counters.puts_attempted == 0
    assert out_local.counters.puts_attempted == 1


def test_update_is_deterministic():
    def once():
        node, outs, ins = make_node(0, [0, 0, 0, 0])
        seq = []
        for _ in range(50):
            node_update(node, [o.outlet for o in outs], [i.inlet for i in ins])
            seq.append(node.color)
            node.color = 0
        return seq

    assert once() == once()


def test_conflict_counts():
    t3 = make_toroidal_grid(3, 3)
    assert count_conflicts(t3, [0] * 9) == 18
    t4 = make_toroidal_grid(4, 4)
    checker = [(n % 4 + n // 4) % 2 for n in range(16)]
    assert count_conflicts(t4, checker) == 0
    assert count_conflicts(t4, dict(enumerate(checker))) == 0


@given(st.sampled_from([(4, 4), (5, 5), (3, 7)]), st.data())
def test_conflicts_match_brute_force(shape, data):
    w, h = shape
    colors = data.draw(st.lists(st.integers(0, 2), min_size=w * h, max_size=w * h))
    assert count_conflicts(make_toroidal_grid(w, h), colors) == brute_force_conflicts(w, h, colors)


def test_missing_color_rejected():
    with pytest.raises(ValueError):
        count_conflicts(make_toroidal_grid(3, 3), [0] * 8)
    with pytest.raises(ValueError):
        count_conflicts(make_toroidal_grid(3, 3), {i: 0 for i in range(8)})


def test_pack_roundtrip():
    colors = {5: 2, 1: 0, 9: 1}
    assert unpack_colors(pack_colors(colors)) == colors


def test_gather_colors_across_ranks():
    hub = LoopbackHub()
    groups = [WorkerGroup(2, ProcessComm(t), 2) for t in hub.endpoints(2)]
    parts = [{0: 1, 1: 2}, {2: 0}, {3: 1}, {4: 2, 5: 0}]
    out = spawn([lambda i=i: gather_colors(groups[i // 2], parts[i]) for i in range(4)])
    assert out[0] == {0: 1, 1: 2, 2: 0, 3: 1, 4: 2, 5: 0}
    assert out[2] is None
