"""Decentralized graph coloring over best-effort channels.

Each node keeps a probability vector over colors. When a node sees a
neighbor with its own color it multiplies that color's probability by
``b``, hands the freed mass to the other colors in proportion to their
current weight, and redraws its color from the updated vector. Every
update ends with the node sending its color to all neighbors, whether or
not it changed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import Inlet, Outlet
from .ducts import BackendKind
from .topology import Topology

DEGENERATE = 1.0 - 1e-12

_PAIR = struct.Struct("<II")


def update_probabilities(prob: Sequence[float], current: int, b: float) -> list[float]:
    """Penalize ``current`` by the factor ``b`` and renormalize proportionally.

    If ``prob[current]`` is within 1e-12 of 1 the proportional rule is
    undefined (no other mass to scale), so the uniform distribution is
    returned instead.
    """
    pc = prob[current]
    n = len(prob)
    rest = sum(p for i, p in enumerate(prob) if i != current)
    if pc >= DEGENERATE or rest <= 0.0:
        return [1.0 / n] * n
    # same as (1 - b*pc) / (1 - pc) for a normalized vector, without the
    # cancellation in 1 - pc when pc is close to 1
    scale = (rest + (1.0 - b) * pc) / rest
    out = [p * scale for p in prob]
    out[current] = b * pc
    total = sum(out)
    return [p / total for p in out]


def node_rng(seed: int, node: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, node)``."""
    key = ((seed & 0xFFFFFFFFFFFFFFFF) << 64) | (node & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def initial_color(seed: int, node: int, colors: int) -> int:
    """The first draw of the node's generator; any process can recompute it."""
    return int(node_rng(seed, node).integers(colors))


@dataclass(slots=True)
class ColoringNode:
    id: int
    color: int
    prob: list[float]
    rng: np.random.Generator
    last_seen: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, node: int, seed: int, colors: int, neighbor_colors: Sequence[int] = ()) -> ColoringNode:
        rng = node_rng(seed, node)
        color = int(rng.integers(colors))
        return cls(node, color, [1.0 / colors] * colors, rng, list(neighbor_colors))

    def sample(self) -> int:
        u = self.rng.random()
        acc = 0.0
        prob = self.prob
        for c, p in enumerate(prob):
            acc += p
            if u < acc:
                return c
        return len(prob) - 1


def node_update(
    node: ColoringNode,
    outlets: Sequence[Outlet],
    inlets: Sequence[Inlet],
    b: float = 0.1,
    communicate: bool = True,
) -> bool:
    """One update of one node; returns True if a conflict was seen.

    With ``communicate=False`` only same-thread channels are read and
    written; cross-cpu neighbors keep their cached colors.
    """
    seen = node.last_seen
    if communicate:
        for i, outlet in enumerate(outlets):
            seen[i] = outlet.jump().payload
    else:
        for i, outlet in enumerate(outlets):
            if outlet.channel.kind is BackendKind.INTRA_THREAD:
                seen[i] = outlet.jump().payload
    color = node.color
    conflict = color in seen
    if conflict:
        node.prob = update_probabilities(node.prob, color, b)
        color = node.color = node.sample()
    if communicate:
        for inlet in inlets:
            inlet.try_put(color)
    else:
        for inlet in inlets:
            if inlet.channel.kind is BackendKind.INTRA_THREAD:
                inlet.try_put(color)
    return conflict


def undirected_pairs(topology: Topology) -> list[tuple[int, int]]:
    return sorted({(min(s, d), max(s, d)) for s, d in topology.edges if s != d})


def count_conflicts(topology: Topology, colors: Sequence[int] | Mapping[int, int]) -> int:
    """Adjacent node pairs sharing a color, each unordered pair counted once."""
    if isinstance(colors, Mapping):
        missing = [n for n in range(topology.node_count) if n not in colors]
    else:
        missing = list(range(len(colors), topology.node_count))
    if missing:
        raise ValueError(f"no color for nodes {missing[:10]}")
    return sum(1 for s, d in undirected_pairs(topology) if colors[s] == colors[d])


def pack_colors(colors: Mapping[int, int]) -> bytes:
    return b"".join(_PAIR.pack(n, c) for n, c in sorted(colors.items()))


def unpack_colors(data: bytes) -> dict[int, int]:
    return {n: c for n, c in _PAIR.iter_unpack(data)}


def gather_colors(group, local: Mapping[int, int]) -> dict[int, int] | None:
    """Collect every worker's node colors on rank 0; None on other ranks."""
    gathered = group.gather(pack_colors(local))
    if gathered is None:
        return None
    merged: dict[int, int] = {}
    for bodies in gathered.values():
        for body in bodies:
            merged.update(unpack_colors(body))
    return merged
