"""Dataset splits, route sampling, and the on-disk sample/manifest formats.

Sample record format (one per line, UTF-8):

    graph=<id> start=<tag> plan=<b1 b2 ...> text="<instruction>"

A dataset directory holds graph files under graphs/, one .samples file per
split, and a manifest tying them together.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPlan, MissingGraph, ParseError, SpecInfeasible
from .graph import (
    BehavioralGraph,
    NavPlan,
    NodeId,
    normalize_behavior,
    read_graph,
    write_graph,
)
from .language import synthesize_instruction
from .worldgen import WorldSpec, generate_world

SPLIT_NAMES = ("training", "test-repeated", "test-new")

_SAMPLE_RE = re.compile(r'graph=(\S+) start=(\S+) plan=(.*?) text="(.*)"\Z')


@dataclass(frozen=True)
class Sample:
    """One dataset row: where the robot starts, what it is told, what it should do."""

    graph_id: str
    start: NodeId
    instruction: str
    plan: NavPlan


@dataclass
class DatasetSplit:
    name: str
    samples: list[Sample] = field(default_factory=list)
    graphs: list[BehavioralGraph] = field(default_factory=list)

    def graphs_by_id(self) -> dict[str, BehavioralGraph]:
        return {g.graph_id: g for g in self.graphs}

    def route_keys(self) -> set[tuple[str, str, tuple[str, ...]]]:
        return {(s.graph_id, s.start.tag, s.plan.behaviors) for s in self.samples}


def split_counts(split: DatasetSplit) -> tuple[int, int, int]:
    """(#single-instruction plans, #double-instruction plans, total samples)."""
    per_route: dict[tuple[str, str, tuple[str, ...]], int] = {}
    for s in split.samples:
        key = (s.graph_id, s.start.tag, s.plan.behaviors)
        per_route[key] = per_route.get(key, 0) + 1
    doubles = sum(1 for v in per_route.values() if v >= 2)
    singles = sum(1 for v in per_route.values() if v == 1)
    return singles, doubles, len(split.samples)


def format_counts_table(splits) -> str:
    lines = [f"{'split':<14} {'#single':>8} {'#double':>8} {'total':>8}"]
    for split in splits:
        singles, doubles, total = split_counts(split)
        lines.append(f"{split.name:<14} {singles:>8} {doubles:>8} {total:>8}")
    return "\n".join(lines)


# -- building -------------------------------------------------------------------


def build_dataset(
    n_train_graphs: int,
    n_new_graphs: int,
    routes_per_graph: int,
    double_fraction: float,
    seed: int,
    *,
    test_routes_per_graph: int | None = None,
    new_routes_per_graph: int | None = None,
    suboptimal_fraction: float = 0.05,
    rooms_range: tuple[int, int] = (6, 10),
    max_plan_len: int = 12,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Generate training / test-repeated / test-new splits.

    Training routes are shortest paths (plus a configurable detour fraction);
    `double_fraction` of training plans get a second, distinct instruction.
    Test-repeated reuses training graphs with unseen routes; test-new uses
    graphs the training split never saw.
    """
    if min(n_train_graphs, n_new_graphs, routes_per_graph) < 1:
        raise SpecInfeasible("graph and route counts must be positive")
    if not 0.0 <= double_fraction <= 1.0:
        raise SpecInfeasible("double_fraction must be in [0, 1]")
    if test_routes_per_graph is None:
        test_routes_per_graph = max(1, routes_per_graph // 5)
    if new_routes_per_graph is None:
        new_routes_per_graph = routes_per_graph

    rng = np.random.default_rng([seed % 2**32, 23])

    def make_graphs(prefix, count):
        graphs = []
        for i in range(count):
            spec = WorldSpec(
                seed=int(rng.integers(2**31)),
                num_rooms=int(rng.integers(rooms_range[0], rooms_range[1] + 1)),
                graph_id=f"{prefix}-{i:03d}",
            )
            graphs.append(generate_world(spec))
        return graphs

    train_graphs = make_graphs("train", n_train_graphs)
    new_graphs = make_graphs("new", n_new_graphs)

    train_routes: list[NavPlan] = []
    train_route_graph: list[str] = []
    seen: set[tuple[str, str, tuple[str, ...]]] = set()
    for g in train_graphs:
        for plan in _sample_routes(
            g, routes_per_graph, rng, seen, suboptimal_fraction, max_plan_len
        ):
            train_routes.append(plan)
            train_route_graph.append(g.graph_id)

    n_doubles = int(round(double_fraction * len(train_routes)))
    double_idx = set(
        int(i) for i in rng.permutation(len(train_routes))[:n_doubles]
    )

    graphs_by_id = {g.graph_id: g for g in train_graphs + new_graphs}
    training = DatasetSplit("training", [], train_graphs)
    for i, plan in enumerate(train_routes):
        g = graphs_by_id[train_route_graph[i]]
        first_seed = int(rng.integers(2**31))
        text = synthesize_instruction(g, plan, first_seed)
        training.samples.append(Sample(g.graph_id, plan.start, text, plan))
        if i in double_idx:
            second = _distinct_instruction(g, plan, text, rng)
            training.samples.append(Sample(g.graph_id, plan.start, second, plan))

    test_repeated = DatasetSplit("test-repeated", [], train_graphs)
    for g in train_graphs:
        for plan in _sample_routes(
            g, test_routes_per_graph, rng, seen, suboptimal_fraction, max_plan_len
        ):
            text = synthesize_instruction(g, plan, int(rng.integers(2**31)))
            test_repeated.samples.append(Sample(g.graph_id, plan.start, text, plan))

    test_new = DatasetSplit("test-new", [], new_graphs)
    for g in new_graphs:
        for plan in _sample_routes(
            g, new_routes_per_graph, rng, seen, suboptimal_fraction, max_plan_len
        ):
            text = synthesize_instruction(g, plan, int(rng.integers(2**31)))
            test_new.samples.append(Sample(g.graph_id, plan.start, text, plan))

    check_split_hygiene(training, test_repeated, test_new)
    return training, test_repeated, test_new


def _distinct_instruction(g, plan, first_text, rng, tries=100) -> str:
    for _ in range(tries):
        text = synthesize_instruction(g, plan, int(rng.integers(2**31)))
        if text != first_text:
            return text
    raise SpecInfeasible(f"could not phrase plan {plan.behaviors} two distinct ways")


def _sample_routes(g, count, rng, seen, suboptimal_fraction, max_plan_len):
    routes = []
    tries = 0
    limit = 400 * count
    while len(routes) < count and tries < limit:
        tries += 1
        i, j = rng.choice(g.num_nodes, size=2, replace=False)
        start, goal = g.nodes[int(i)], g.nodes[int(j)]
        plan = g.shortest_path(start, goal)
        if not 1 <= len(plan) <= max_plan_len:
            continue
        if rng.random() < suboptimal_fraction:
            detoured = _detour(g, plan, rng, max_plan_len + 2)
            if detoured is not None:
                plan = detoured
        key = (g.graph_id, start.tag, plan.behaviors)
        if key in seen:
            continue
        seen.add(key)
        routes.append(plan)
    if len(routes) < count:
        raise SpecInfeasible(
            f"graph {g.graph_id}: only found {len(routes)} of {count} distinct routes"
        )
    return routes


def _detour(g, plan: NavPlan, rng, max_len) -> NavPlan | None:
    """Splice a side trip into a plan: leave the route at one node, come back,
    continue. Corridor/hall side trips are preferred."""
    nodes = g.execute_plan(plan)
    positions = list(rng.permutation(len(plan.behaviors)))
    for pos in positions:
        pos = int(pos)
        node = nodes[pos]
        options = []
        for b in g.out_behaviors(node):
            if b == plan.behaviors[pos]:
                continue
            x = g.transition(node, b)
            rank = 0 if x.location_type in ("corridor", "hall") else 1
            options.append((rank, b, x))
        options.sort(key=lambda o: (o[0], o[1]))
        for _, b, x in options:
            try:
                back = g.shortest_path(x, node)
            except Exception:
                continue
            behaviors = (
                plan.behaviors[:pos] + (b,) + back.behaviors + plan.behaviors[pos:]
            )
            if len(behaviors) <= max_len and len(behaviors) > len(plan.behaviors):
                return NavPlan(plan.start, behaviors)
    return None


def check_split_hygiene(training, test_repeated, test_new):
    """Assert the split invariants; raises SpecInfeasible on violation."""
    train_keys = training.route_keys()
    if train_keys & test_repeated.route_keys():
        raise SpecInfeasible("test-repeated shares a route with training")
    train_graph_ids = {g.graph_id for g in training.graphs}
    rep_ids = {s.graph_id for s in test_repeated.samples}
    if not rep_ids <= train_graph_ids:
        raise SpecInfeasible("test-repeated uses a graph outside the training set")
    new_ids = {s.graph_id for s in test_new.samples}
    if new_ids & train_graph_ids:
        raise SpecInfeasible("test-new reuses a training graph")


# -- sample file IO ---------------------------------------------------------------


def sample_line(s: Sample) -> str:
    if '"' in s.instruction or "\n" in s.instruction:
        raise ValueError("instruction text may not contain double quotes or newlines")
    plan = " ".join(s.plan.behaviors)
    return f'graph={s.graph_id} start={s.start.tag} plan={plan} text="{s.instruction}"'


def write_samples(split: DatasetSplit, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in split.samples:
            fh.write(sample_line(s) + "\n")


def read_samples(path, graphs_by_id: dict[str, BehavioralGraph], name: str) -> DatasetSplit:
    samples = []
    used: dict[str, BehavioralGraph] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            m = _SAMPLE_RE.match(line)
            if not m:
                raise ParseError("malformed sample record", line=lineno, source=path)
            graph_id, start_tag, plan_field, text = m.groups()
            g = graphs_by_id.get(graph_id)
            if g is None:
                raise MissingGraph(f"{path}:{lineno}: unknown graph id {graph_id!r}")
            try:
                start = g.node(start_tag)
            except Exception:
                raise ParseError(
                    f"start tag {start_tag!r} not in graph {graph_id}",
                    line=lineno,
                    source=path,
                ) from None
            behaviors = []
            for tok in plan_field.split():
                try:
                    behaviors.append(normalize_behavior(tok))
                except ValueError:
                    raise ParseError(
                        f"malformed behavior token {tok!r}", line=lineno, source=path
                    ) from None
            if not text.strip():
                raise ParseError("empty instruction text", line=lineno, source=path)
            plan = NavPlan(start, tuple(behaviors))
            try:
                g.execute_plan(plan)
            except InvalidPlan as exc:
                raise ParseError(
                    f"gold plan invalid at step {exc.step}", line=lineno, source=path
                ) from None
            used[graph_id] = g
            samples.append(Sample(graph_id, start, text, plan))
    graphs = [used[k] for k in sorted(used)]
    return DatasetSplit(name, samples, graphs)


# -- dataset directory (manifest) -------------------------------------------------


def write_dataset(splits, out_dir) -> str:
    """Write graph files, sample files, and the manifest; returns manifest path."""
    os.makedirs(os.path.join(out_dir, "graphs"), exist_ok=True)
    manifest_lines = ["dataset-manifest v1"]
    written_graphs = set()
    for split in splits:
        manifest_lines.append(f"split {split.name}")
        for g in sorted(split.graphs, key=lambda g: g.graph_id):
            rel = os.path.join("graphs", f"{g.graph_id}.graph")
            if g.graph_id not in written_graphs:
                write_graph(g, os.path.join(out_dir, rel))
                written_graphs.add(g.graph_id)
            manifest_lines.append(f"graph {rel}")
        rel_samples = f"{split.name}.samples"
        write_samples(split, os.path.join(out_dir, rel_samples))
        manifest_lines.append(f"samples {rel_samples}")
    manifest_path = os.path.join(out_dir, "manifest.txt")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")
    return manifest_path


def read_dataset(path) -> dict[str, DatasetSplit]:
    """Read a dataset directory (or its manifest file) into splits by name."""
    if os.path.isdir(path):
        manifest_path = os.path.join(path, "manifest.txt")
    else:
        manifest_path = path
    base = os.path.dirname(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].split() != ["dataset-manifest", "v1"]:
        raise ParseError("not a dataset manifest", line=1, source=manifest_path)

    splits: dict[str, DatasetSplit] = {}
    current: str | None = None
    graph_files: dict[str, list[str]] = {}
    sample_files: dict[str, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(None, 1)
        if parts[0] == "split" and len(parts) == 2:
            current = parts[1].strip()
            graph_files[current] = []
        elif parts[0] == "graph" and current and len(parts) == 2:
            graph_files[current].append(parts[1].strip())
        elif parts[0] == "samples" and current and len(parts) == 2:
            sample_files[current] = parts[1].strip()
        else:
            raise ParseError(
                f"unrecognized manifest line {line!r}", line=lineno, source=manifest_path
            )

    graph_cache: dict[str, BehavioralGraph] = {}
    for name, rels in graph_files.items():
        graphs = []
        for rel in rels:
            full = os.path.join(base, rel)
            if full not in graph_cache:
                graph_cache[full] = read_graph(full)
            graphs.append(graph_cache[full])
        by_id = {g.graph_id: g for g in graphs}
        if name not in sample_files:
            raise ParseError(f"split {name} lists no samples file", source=manifest_path)
        split = read_samples(os.path.join(base, sample_files[name]), by_id, name)
        split.graphs = graphs
        splits[name] = split
    return splits
