"""Behavioral navigation graphs: typed locations joined by executable behavior edges.

A graph is a set of navigational rules, each one a triplet (source node,
behavior with optional landmark attributes, destination node). Transitions are
deterministic: a node has at most one outgoing edge per behavior code, which is
what lets a decoder track its position while emitting behaviors.
"""

from __future__ import annotations

import re
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidPlan,
    NoSuchEdge,
    ParseError,
    ShapeMismatch,
    UnknownNode,
    Unreachable,
)

LOCATION_TYPES = ("room", "lab", "office", "kitchen", "hall", "corridor", "bathroom")

LOCATION_PREFIX = {
    "room": "R",
    "lab": "L",
    "office": "O",
    "kitchen": "K",
    "hall": "H",
    "corridor": "C",
    "bathroom": "B",
}
PREFIX_LOCATION = {v: k for k, v in LOCATION_PREFIX.items()}

# Canonical behavior codes, sorted; "stop" is a reserved decoder symbol, not an edge.
BEHAVIORS = (
    "cf",
    "ch-left",
    "ch-right",
    "io-left",
    "io-right",
    "lt",
    "oio",
    "oo-left",
    "oo-right",
    "rt",
    "sp",
)
STOP = "stop"
DECODER_ALPHABET = BEHAVIORS + (STOP,)
BEHAVIOR_INDEX = {b: i for i, b in enumerate(DECODER_ALPHABET)}

# Short spellings accepted on input and normalized to the canonical codes.
BEHAVIOR_ALIASES = {
    "ool": "oo-left",
    "oor": "oo-right",
    "iol": "io-left",
    "ior": "io-right",
    "chl": "ch-left",
    "chr": "ch-right",
    "left-io": "io-left",
    "right-io": "io-right",
    "oo-l": "oo-left",
    "oo-r": "oo-right",
}

LANDMARKS = tuple(
    sorted(
        [
            "painting",
            "bookshelf",
            "table",
            "chair",
            "sofa",
            "plant",
            "vase",
            "lamp",
            "whiteboard",
            "window",
            "trash-can",
            "water-fountain",
            "fire-extinguisher",
            "clock",
            "poster",
            "cabinet",
            "printer",
            "couch",
            "mirror",
            "rug",
        ]
    )
)
LANDMARK_INDEX = {lm: i for i, lm in enumerate(LANDMARKS)}

# Additive mask sentinel standing for -inf; keeps arithmetic finite while
# softmax(logit + MASK_NEG) still underflows to exactly 0.0 in float64.
MASK_NEG = -1.0e9

# Width of the behavior-and-attribute segment of a triplet encoding:
# one-hot over the 11 behaviors plus multi-hot over the 20 landmarks.
EDGE_ENCODING_WIDTH = len(BEHAVIORS) + len(LANDMARKS)

_TAG_RE = re.compile(r"([A-Z])-(\d+)\Z")


def normalize_behavior(code: str) -> str:
    """Map a behavior spelling (canonical or alias) to its canonical code."""
    code = code.strip().lower()
    code = BEHAVIOR_ALIASES.get(code, code)
    if code not in BEHAVIOR_INDEX or code == STOP:
        raise ValueError(f"unknown behavior code {code!r}")
    return code


@dataclass(frozen=True)
class NodeId:
    """A typed location. Tags render as '<Prefix>-<index>', e.g. 'R-1'."""

    location_type: str
    index: int

    def __post_init__(self):
        if self.location_type not in LOCATION_PREFIX:
            raise ValueError(f"unknown location type {self.location_type!r}")
        if self.index < 0:
            raise ValueError("node index must be non-negative")

    @property
    def tag(self) -> str:
        return f"{LOCATION_PREFIX[self.location_type]}-{self.index}"

    @property
    def spoken(self) -> str:
        """Word used when talking about the place ('room', 'kitchen', ...)."""
        return self.location_type

    @staticmethod
    def parse(tag: str) -> "NodeId":
        m = _TAG_RE.match(tag.strip())
        if not m or m.group(1) not in PREFIX_LOCATION:
            raise ValueError(f"malformed node tag {tag!r}")
        return NodeId(PREFIX_LOCATION[m.group(1)], int(m.group(2)))

    def __str__(self):
        return self.tag


@dataclass(frozen=True)
class Triplet:
    """One navigational rule: from `src`, behavior (with landmarks) leads to `dst`."""

    src: NodeId
    behavior: str
    attrs: tuple[str, ...]
    dst: NodeId

    def __post_init__(self):
        object.__setattr__(self, "behavior", normalize_behavior(self.behavior))
        attrs = tuple(sorted(set(a.strip().lower() for a in self.attrs)))
        for a in attrs:
            if a not in LANDMARK_INDEX:
                raise ValueError(f"unknown landmark {a!r}")
        object.__setattr__(self, "attrs", attrs)
        if self.src == self.dst:
            raise ValueError(f"self-loop triplet at {self.src.tag}")

    def edge_line(self) -> str:
        return f"edge {self.src.tag} {self.behavior} [{','.join(self.attrs)}] {self.dst.tag}"


@dataclass(frozen=True)
class NavPlan:
    """A start node plus the behavior sequence to execute from it."""

    start: NodeId
    behaviors: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "behaviors", tuple(normalize_behavior(b) for b in self.behaviors)
        )

    def __len__(self):
        return len(self.behaviors)


@dataclass(frozen=True)
class Unrepairable:
    """Returned by dfs_repair when no valid sequence exists within the edit budget."""

    behaviors: tuple[str, ...]


class BehavioralGraph:
    """Immutable graph over NodeIds with deterministic (node, behavior) transitions."""

    def __init__(self, graph_id: str, nodes, triplets):
        if not graph_id or any(c.isspace() for c in graph_id):
            raise ValueError("graph id must be a non-empty token without whitespace")
        self.graph_id = graph_id
        self.nodes = tuple(sorted(set(nodes), key=lambda n: n.tag))
        self._node_pos = {n.tag: i for i, n in enumerate(self.nodes)}
        self.triplets = tuple(triplets)
        self._edges: dict[tuple[str, str], Triplet] = {}
        for t in self.triplets:
            for end in (t.src, t.dst):
                if end.tag not in self._node_pos:
                    raise ValueError(f"triplet endpoint {end.tag} not among nodes")
            key = (t.src.tag, t.behavior)
            if key in self._edges:
                raise ValueError(
                    f"duplicate transition ({t.src.tag}, {t.behavior}): "
                    "graphs must be deterministic per (node, behavior)"
                )
            self._edges[key] = t
        self._out: dict[str, dict[str, Triplet]] = {n.tag: {} for n in self.nodes}
        for t in self.triplets:
            self._out[t.src.tag][t.behavior] = t
        self._diameter = None

    # -- basic access -------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triplets(self) -> int:
        return len(self.triplets)

    def has_node(self, node: NodeId) -> bool:
        return node.tag in self._node_pos and self.nodes[self._node_pos[node.tag]] == node

    def node(self, tag: str) -> NodeId:
        pos = self._node_pos.get(tag.strip())
        if pos is None:
            raise UnknownNode(f"node {tag!r} not in graph {self.graph_id}")
        return self.nodes[pos]

    def node_position(self, node: NodeId) -> int:
        self._require(node)
        return self._node_pos[node.tag]

    def out_behaviors(self, node: NodeId) -> tuple[str, ...]:
        self._require(node)
        return tuple(sorted(self._out[node.tag]))

    def _require(self, node: NodeId):
        if not self.has_node(node):
            raise UnknownNode(f"node {node.tag} not in graph {self.graph_id}")

    def canonical_triplets(self) -> tuple[Triplet, ...]:
        """Triplets sorted by their rendered edge line (the 'alphabetical' order)."""
        return tuple(sorted(self.triplets, key=Triplet.edge_line))

    # -- execution ----------------------------------------------------------

    def transition(self, node: NodeId, behavior: str) -> NodeId:
        """Follow the unique edge (node, behavior); raise NoSuchEdge if absent."""
        self._require(node)
        behavior = normalize_behavior(behavior)
        t = self._edges.get((node.tag, behavior))
        if t is None:
            raise NoSuchEdge(f"no edge ({node.tag}, {behavior}) in graph {self.graph_id}")
        return t.dst

    def triplet_at(self, node: NodeId, behavior: str) -> Triplet:
        self._require(node)
        t = self._edges.get((node.tag, normalize_behavior(behavior)))
        if t is None:
            raise NoSuchEdge(f"no edge ({node.tag}, {behavior}) in graph {self.graph_id}")
        return t

    def execute_plan(self, plan: NavPlan) -> list[NodeId]:
        """Run the plan, returning the T+1 visited nodes (start included)."""
        self._require(plan.start)
        nodes = [plan.start]
        for step, b in enumerate(plan.behaviors, start=1):
            try:
                nodes.append(self.transition(nodes[-1], b))
            except NoSuchEdge:
                raise InvalidPlan(step, nodes) from None
        return nodes

    def is_valid_plan(self, plan: NavPlan) -> bool:
        try:
            self.execute_plan(plan)
            return True
        except InvalidPlan:
            return False

    # -- decoding support ---------------------------------------------------

    def mask(self, node: NodeId) -> np.ndarray:
        """Additive logit mask over the 12-symbol decoder alphabet at `node`.

        Valid behaviors and "stop" get 0; everything else gets MASK_NEG.
        """
        self._require(node)
        m = np.full(len(DECODER_ALPHABET), MASK_NEG, dtype=np.float64)
        m[BEHAVIOR_INDEX[STOP]] = 0.0
        for b in self._out[node.tag]:
            m[BEHAVIOR_INDEX[b]] = 0.0
        return m

    def encode_triplet(self, t: Triplet, node_dim: int | None = None) -> np.ndarray:
        """One-hot/multi-hot encoding [src | behavior+landmarks | dst].

        `node_dim` pads each node segment to a fixed width so encodings from
        graphs of different sizes can share one projection matrix.
        """
        key = (t.src.tag, t.behavior)
        if self._edges.get(key) != t:
            raise ValueError(f"triplet {t.edge_line()!r} is not part of graph {self.graph_id}")
        nd = self.num_nodes if node_dim is None else node_dim
        if self.num_nodes > nd:
            raise ShapeMismatch(
                f"graph has {self.num_nodes} nodes but node_dim is only {nd}"
            )
        vec = np.zeros(2 * nd + EDGE_ENCODING_WIDTH, dtype=np.float64)
        vec[self._node_pos[t.src.tag]] = 1.0
        vec[nd + BEHAVIOR_INDEX[t.behavior]] = 1.0
        for lm in t.attrs:
            vec[nd + len(BEHAVIORS) + LANDMARK_INDEX[lm]] = 1.0
        vec[nd + EDGE_ENCODING_WIDTH + self._node_pos[t.dst.tag]] = 1.0
        return vec

    def order_triplets(self, start: NodeId) -> list[Triplet]:
        """Order triplets by BFS distance of their source node from `start`.

        Triplets leaving `start` come first; ties (and unreachable sources)
        break on the canonical edge-line rendering.
        """
        dist = self.bfs_distances(start)
        inf = float("inf")
        return sorted(
            self.triplets, key=lambda t: (dist.get(t.src.tag, inf), t.edge_line())
        )

    # -- search -------------------------------------------------------------

    def bfs_distances(self, start: NodeId, reverse: bool = False) -> dict[str, int]:
        """Hop counts from `start` following edges forward (or backward)."""
        self._require(start)
        if reverse:
            adj: dict[str, set[str]] = {n.tag: set() for n in self.nodes}
            for t in self.triplets:
                adj[t.dst.tag].add(t.src.tag)
            neighbors = lambda tag: sorted(adj[tag])
        else:
            neighbors = lambda tag: sorted(
                {t.dst.tag for t in self._out[tag].values()}
            )
        dist = {start.tag: 0}
        queue = deque([start.tag])
        while queue:
            tag = queue.popleft()
            for nxt in neighbors(tag):
                if nxt not in dist:
                    dist[nxt] = dist[tag] + 1
                    queue.append(nxt)
        return dist

    def shortest_path(self, start: NodeId, goal: NodeId) -> NavPlan:
        """Minimum-length behavior sequence from start to goal.

        Among equally short plans, returns the lexicographically smallest
        behavior sequence (greedy walk over goal distances with behaviors
        tried in canonical order).
        """
        self._require(start)
        self._require(goal)
        if start == goal:
            return NavPlan(start, ())
        dist = self.bfs_distances(goal, reverse=True)
        if start.tag not in dist:
            raise Unreachable(f"{goal.tag} is not reachable from {start.tag}")
        behaviors = []
        node = start
        while node != goal:
            d = dist[node.tag]
            for b in self.out_behaviors(node):
                nxt = self._edges[(node.tag, b)].dst
                if dist.get(nxt.tag, -1) == d - 1:
                    behaviors.append(b)
                    node = nxt
                    break
            else:  # pragma: no cover - BFS guarantees a predecessor exists
                raise Unreachable(f"no descent step from {node.tag}")
        return NavPlan(start, tuple(behaviors))

    def diameter(self) -> int:
        """Longest finite shortest-path hop count over all node pairs (cached)."""
        if self._diameter is None:
            best = 0
            for n in self.nodes:
                dist = self.bfs_distances(n)
                if dist:
                    best = max(best, max(dist.values()))
            self._diameter = best
        return self._diameter

    # -- connectivity -------------------------------------------------------

    def is_weakly_connected(self) -> bool:
        if not self.nodes:
            return True
        adj: dict[str, set[str]] = {n.tag: set() for n in self.nodes}
        for t in self.triplets:
            adj[t.src.tag].add(t.dst.tag)
            adj[t.dst.tag].add(t.src.tag)
        seen = {self.nodes[0].tag}
        queue = deque(seen)
        while queue:
            tag = queue.popleft()
            for nxt in adj[tag]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.nodes)

    def is_strongly_connected(self) -> bool:
        if not self.nodes:
            return True
        first = self.nodes[0]
        return (
            len(self.bfs_distances(first)) == self.num_nodes
            and len(self.bfs_distances(first, reverse=True)) == self.num_nodes
        )


def dfs_repair(
    g: BehavioralGraph,
    start: NodeId,
    seq,
    max_edits: int = 3,
) -> NavPlan | Unrepairable:
    """Try to turn `seq` into a valid same-length plan with <= max_edits substitutions.

    Edit budgets are tried in increasing order, so a repair with the fewest
    substitutions wins. Within a budget the search is a deterministic DFS:
    positions left to right, the original behavior first when executable, then
    executable replacements in lexicographic order. Returns Unrepairable when
    every budget is exhausted.
    """
    g._require(start)
    seq = tuple(normalize_behavior(b) for b in seq)

    def search(node: NodeId, t: int, edits: int, budget: int):
        if t == len(seq):
            return ()
        out = g.out_behaviors(node)
        candidates = []
        if seq[t] in out:
            candidates.append((seq[t], 0))
        if edits < budget:
            candidates.extend((b, 1) for b in out if b != seq[t])
        for b, cost in candidates:
            rest = search(g.transition(node, b), t + 1, edits + cost, budget)
            if rest is not None:
                return (b,) + rest
        return None

    for budget in range(max_edits + 1):
        found = search(start, 0, 0, budget)
        if found is not None:
            return NavPlan(start, found)
    return Unrepairable(seq)


# -- file format --------------------------------------------------------------
#
# graph <id> nodes=<N>
# node <tag>:<location_type>          (sorted by tag)
# edge <from> <behavior> [<lm>,...] <to>   (sorted by from, behavior, to)

_HEADER_RE = re.compile(r"graph (\S+) nodes=(\d+)\Z")
_NODE_RE = re.compile(r"node (\S+):(\S+)\Z")
_EDGE_RE = re.compile(r"edge (\S+) (\S+) \[([^\]]*)\] (\S+)\Z")


def format_graph(g: BehavioralGraph) -> str:
    lines = [f"graph {g.graph_id} nodes={g.num_nodes}"]
    lines.extend(f"node {n.tag}:{n.location_type}" for n in g.nodes)
    lines.extend(
        t.edge_line()
        for t in sorted(g.triplets, key=lambda t: (t.src.tag, t.behavior, t.dst.tag))
    )
    return "\n".join(lines) + "\n"


def write_graph(g: BehavioralGraph, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_graph(g))


def parse_graph(text: str, source="<string>") -> BehavioralGraph:
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise ParseError("empty graph file", source=source)
    m = _HEADER_RE.match(lines[0].strip())
    if not m:
        raise ParseError("expected 'graph <id> nodes=<N>' header", line=1, source=source)
    graph_id, declared = m.group(1), int(m.group(2))
    nodes: list[NodeId] = []
    triplets: list[Triplet] = []
    seen_edges: set[tuple[str, str]] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("node "):
            nm = _NODE_RE.match(line)
            if not nm:
                raise ParseError("malformed node line", line=lineno, source=source)
            tag, loc = nm.group(1), nm.group(2)
            try:
                node = NodeId.parse(tag)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, source=source) from None
            if node.location_type != loc:
                raise ParseError(
                    f"tag {tag} disagrees with location type {loc}",
                    line=lineno,
                    source=source,
                )
            nodes.append(node)
        elif line.startswith("edge "):
            em = _EDGE_RE.match(line)
            if not em:
                raise ParseError("malformed edge line", line=lineno, source=source)
            try:
                src = NodeId.parse(em.group(1))
                dst = NodeId.parse(em.group(4))
                behavior = normalize_behavior(em.group(2))
                attrs = tuple(a for a in em.group(3).split(",") if a)
                t = Triplet(src, behavior, attrs, dst)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, source=source) from None
            if (src.tag, behavior) in seen_edges:
                raise ParseError(
                    f"duplicate transition ({src.tag}, {behavior})",
                    line=lineno,
                    source=source,
                )
            seen_edges.add((src.tag, behavior))
            triplets.append(t)
        else:
            raise ParseError(f"unrecognized line {line!r}", line=lineno, source=source)
    if len(nodes) != declared:
        raise ParseError(
            f"header declares {declared} nodes but {len(nodes)} node lines found",
            source=source,
        )
    try:
        g = BehavioralGraph(graph_id, nodes, triplets)
    except ValueError as exc:
        raise ParseError(str(exc), source=source) from None
    if not g.is_weakly_connected():
        warnings.warn(f"graph {graph_id} from {source} is not weakly connected")
    return g


def read_graph(path) -> BehavioralGraph:
    with open(path, "r", encoding="ascii") as fh:
        return parse_graph(fh.read(), source=str(path))
