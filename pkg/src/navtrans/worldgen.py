"""Random indoor environments expressed as behavioral navigation graphs.

The layout is a corridor backbone: corridors come in two-node segments joined
at junctions (lt/rt/sp edges), halls bridge junction nodes (ch-left/ch-right),
and rooms, offices, labs, kitchens and bathrooms hang off corridor nodes via
io/oo/oio edges. Every generated graph is strongly connected so any (start,
goal) pair yields a route, and transitions stay deterministic per
(node, behavior).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecInfeasible
from .graph import LANDMARKS, BehavioralGraph, NodeId, Triplet

_MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class WorldSpec:
    """Parameters of one generated environment."""

    seed: int
    num_rooms: int = 8
    num_corridors: int | None = None  # corridor segments (2 nodes each); None = auto
    num_halls: int | None = None
    landmark_density: float = 0.3
    graph_id: str | None = None

    def __post_init__(self):
        if not 6 <= self.num_rooms <= 65:
            raise SpecInfeasible(f"num_rooms must be in [6, 65], got {self.num_rooms}")
        if not 0.0 <= self.landmark_density <= 1.0:
            raise SpecInfeasible("landmark_density must be in [0, 1]")
        if self.num_corridors is not None and self.num_corridors < 1:
            raise SpecInfeasible("num_corridors must be positive")
        if self.num_halls is not None and self.num_halls < 0:
            raise SpecInfeasible("num_halls must be non-negative")


def _place_counts(spec: WorldSpec) -> dict[str, int]:
    rooms = spec.num_rooms
    return {
        "room": rooms,
        "office": max(1, rooms // 3),
        "lab": max(1, rooms // 5),
        "kitchen": 1 if rooms < 30 else 2,
        "bathroom": 1 if rooms < 30 else 2,
    }


def generate_world(spec: WorldSpec) -> BehavioralGraph:
    """Build a strongly connected world, deterministic per spec (retrying with
    derived sub-seeds until the connectivity check passes)."""
    counts = _place_counts(spec)
    total_places = sum(counts.values())
    segments = spec.num_corridors
    if segments is None:
        segments = max(2, -(-total_places // 3))
    if 4 * segments < total_places:
        raise SpecInfeasible(
            f"{segments} corridor segments cannot host {total_places} places "
            f"(capacity {4 * segments})"
        )
    halls = spec.num_halls
    if halls is None:
        halls = 1 if segments >= 3 else 0

    for attempt in range(_MAX_ATTEMPTS):
        rng = np.random.default_rng([spec.seed % 2**32, 17, attempt])
        g = _try_build(spec, counts, segments, halls, rng)
        if g is not None and g.is_strongly_connected():
            return g
    raise SpecInfeasible(f"could not build a connected world for {spec}")


def _try_build(spec, counts, segments, halls, rng) -> BehavioralGraph | None:
    corridor_nodes = [NodeId("corridor", i) for i in range(2 * segments)]
    hall_nodes = [NodeId("hall", i) for i in range(halls)]
    places = [
        NodeId(loc, i) for loc in sorted(counts) for i in range(counts[loc])
    ]
    partner = {}
    for s in range(segments):
        a, b = corridor_nodes[2 * s], corridor_nodes[2 * s + 1]
        partner[a.tag] = b
        partner[b.tag] = a

    triplets: list[Triplet] = []
    junction_free = {c.tag: ["lt", "rt", "sp"] for c in corridor_nodes}
    io_free = {c.tag: ["io-left", "io-right"] for c in corridor_nodes}
    attached: dict[tuple[str, str], NodeId] = {}

    def add(src, behavior, dst):
        triplets.append(Triplet(src, behavior, (), dst))

    def take_junction(node, prefer_sp=False) -> str | None:
        free = junction_free[node.tag]
        if not free:
            return None
        # corridors often continue straight through a junction; favoring sp
        # makes multi-junction straight runs (cf sp cf ...) common in routes
        if prefer_sp and "sp" in free and rng.random() < 0.6:
            free.remove("sp")
            return "sp"
        return free.pop(int(rng.integers(len(free))))

    # corridor segments: one cf edge each way
    for s in range(segments):
        a, b = corridor_nodes[2 * s], corridor_nodes[2 * s + 1]
        add(a, "cf", b)
        add(b, "cf", a)

    # spanning junctions between segments, both directions
    for s in range(1, segments):
        mine = [corridor_nodes[2 * s], corridor_nodes[2 * s + 1]]
        theirs = [c for c in corridor_nodes[: 2 * s] if junction_free[c.tag]]
        if not theirs:
            return None
        u = mine[int(rng.integers(2))]
        v = theirs[int(rng.integers(len(theirs)))]
        bu, bv = take_junction(u, prefer_sp=True), take_junction(v, prefer_sp=True)
        if bu is None or bv is None:
            return None
        add(u, bu, v)
        add(v, bv, u)

    # a few extra cross links to create alternative routes
    extras = int(rng.integers(0, max(2, segments // 2)))
    for _ in range(extras):
        free = [c for c in corridor_nodes if junction_free[c.tag]]
        if len(free) < 2:
            break
        u = free[int(rng.integers(len(free)))]
        others = [
            c for c in free if c.tag != u.tag and partner[u.tag].tag != c.tag
        ]
        if not others:
            continue
        v = others[int(rng.integers(len(others)))]
        if any(t.src.tag == u.tag and t.dst.tag == v.tag for t in triplets):
            continue
        bu, bv = take_junction(u, prefer_sp=True), take_junction(v, prefer_sp=True)
        if bu is None or bv is None:
            break
        add(u, bu, v)
        add(v, bv, u)

    # halls bridge two corridor nodes from different segments
    for h in hall_nodes:
        candidates = [c for c in corridor_nodes if junction_free[c.tag]]
        if len(candidates) < 2:
            return None
        u = candidates[int(rng.integers(len(candidates)))]
        rest = [c for c in candidates if c.tag not in (u.tag, partner[u.tag].tag)]
        if not rest:
            return None
        v = rest[int(rng.integers(len(rest)))]
        bu, bv = take_junction(u), take_junction(v)
        if bu is None or bv is None:
            return None
        add(h, "ch-left", u)
        add(h, "ch-right", v)
        add(u, bu, h)
        add(v, bv, h)

    # attach places: corridor enters via io-<side>, place exits via oo-left/right
    order = list(rng.permutation(len(places)))
    for idx in order:
        p = places[idx]
        candidates = [c for c in corridor_nodes if io_free[c.tag]]
        if not candidates:
            return None
        c = candidates[int(rng.integers(len(candidates)))]
        sides = io_free[c.tag]
        side = sides.pop(int(rng.integers(len(sides))))
        add(c, side, p)
        attached[(c.tag, side)] = p
        first, second = (c, partner[c.tag]) if rng.random() < 0.5 else (partner[c.tag], c)
        add(p, "oo-left", first)
        add(p, "oo-right", second)

    # facing places are connected straight across the corridor
    for c in corridor_nodes:
        left = attached.get((c.tag, "io-left"))
        right = attached.get((c.tag, "io-right"))
        if left is not None and right is not None:
            add(left, "oio", right)
            add(right, "oio", left)

    # landmark attributes
    decorated = []
    for t in triplets:
        attrs = ()
        if rng.random() < spec.landmark_density:
            k = 2 if rng.random() < 0.3 else 1
            picks = rng.choice(len(LANDMARKS), size=k, replace=False)
            attrs = tuple(LANDMARKS[int(i)] for i in sorted(picks))
        decorated.append(Triplet(t.src, t.behavior, attrs, t.dst))

    graph_id = spec.graph_id or f"world-{spec.seed}"
    nodes = corridor_nodes + hall_nodes + places
    return BehavioralGraph(graph_id, nodes, decorated)
