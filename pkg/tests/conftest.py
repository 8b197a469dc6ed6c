import numpy as np
import pytest

from navtrans.graph import BehavioralGraph, NodeId, Triplet
from navtrans.worldgen import WorldSpec, generate_world


def node(tag):
    return NodeId.parse(tag)


def edge(src, behavior, dst, attrs=()):
    return Triplet(node(src), behavior, tuple(attrs), node(dst))


@pytest.fixture
def chain_graph():
    """Hand-built graph containing the 5-behavior chain R-1 ... O-3 plus a spur."""
    nodes = [node(t) for t in ("R-1", "C-0", "C-1", "C-2", "C-3", "O-3", "K-0")]
    triplets = [
        edge("R-1", "oo-right", "C-1"),
        edge("C-1", "cf", "C-2", attrs=("vase",)),
        edge("C-2", "lt", "C-0"),
        edge("C-0", "cf", "C-3"),
        edge("C-3", "io-left", "O-3"),
        edge("O-3", "oo-left", "C-3"),
        edge("C-3", "cf", "C-0"),
        edge("C-0", "rt", "C-2"),
        edge("C-2", "cf", "C-1"),
        edge("C-1", "io-right", "R-1", attrs=("plant", "lamp")),
        edge("C-2", "io-left", "K-0"),
        edge("K-0", "oo-right", "C-2"),
    ]
    return BehavioralGraph("chain", nodes, triplets)


@pytest.fixture
def small_world():
    return generate_world(WorldSpec(seed=11, num_rooms=6, graph_id="w11"))


def bfs_oracle(graph, start_tag):
    """Independent BFS over the raw triplet list (ignores graph methods)."""
    adj = {}
    for t in graph.triplets:
        adj.setdefault(t.src.tag, set()).add(t.dst.tag)
    dist = {start_tag: 0}
    frontier = [start_tag]
    while frontier:
        nxt = []
        for tag in frontier:
            for other in sorted(adj.get(tag, ())):
                if other not in dist:
                    dist[other] = dist[tag] + 1
                    nxt.append(other)
        frontier = nxt
    return dist


def rng(seed=0):
    return np.random.default_rng(seed)
