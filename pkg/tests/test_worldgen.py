import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from navtrans.dataset import (
    DatasetSplit,
    Sample,
    build_dataset,
    check_split_hygiene,
    format_counts_table,
    read_dataset,
    read_samples,
    split_counts,
    write_dataset,
    write_samples,
)
from navtrans.errors import MissingGraph, ParseError, SpecInfeasible
from navtrans.graph import (
    BEHAVIORS,
    LANDMARKS,
    LOCATION_TYPES,
    NavPlan,
    Triplet,
)
from navtrans.language import (
    LEMMAS,
    normalize_text,
    parse_instruction,
    synthesize_instruction,
)
from navtrans.worldgen import WorldSpec, generate_world

from conftest import bfs_oracle, edge, node


# -- generate_world ----------------------------------------------------------------


def test_same_spec_same_graph():
    a = generate_world(WorldSpec(seed=21, num_rooms=7))
    b = generate_world(WorldSpec(seed=21, num_rooms=7))
    assert a.nodes == b.nodes
    assert a.triplets == b.triplets


def test_room_count_exact():
    g = generate_world(WorldSpec(seed=2, num_rooms=6))
    rooms = [n for n in g.nodes if n.location_type == "room"]
    assert len(rooms) == 6


def test_connectivity_over_100_seeds():
    for seed in range(100):
        g = generate_world(WorldSpec(seed=seed, num_rooms=6))
        assert g.is_weakly_connected()
        assert g.is_strongly_connected()
        assert len(bfs_oracle(g, g.nodes[0].tag)) == g.num_nodes


def test_default_spec_respects_truncation_budget():
    for seed in range(20):
        g = generate_world(WorldSpec(seed=seed))
        assert g.num_triplets <= 300


def test_vocabulary_constraints():
    g = generate_world(WorldSpec(seed=5, num_rooms=10, landmark_density=0.8))
    assert {n.location_type for n in g.nodes} <= set(LOCATION_TYPES)
    assert {t.behavior for t in g.triplets} <= set(BEHAVIORS)
    attrs = {lm for t in g.triplets for lm in t.attrs}
    assert attrs and attrs <= set(LANDMARKS)


def test_spec_validation():
    with pytest.raises(SpecInfeasible):
        WorldSpec(seed=0, num_rooms=5)
    with pytest.raises(SpecInfeasible):
        WorldSpec(seed=0, num_rooms=66)
    with pytest.raises(SpecInfeasible):
        generate_world(WorldSpec(seed=0, num_rooms=20, num_corridors=2))


def test_hall_edges_present_when_requested():
    g = generate_world(WorldSpec(seed=9, num_rooms=8, num_halls=1))
    hall_behaviors = {t.behavior for t in g.triplets if t.src.location_type == "hall"}
    assert hall_behaviors == {"ch-left", "ch-right"}


def test_backbone_edge_type_discipline():
    place_types = {"room", "office", "lab", "kitchen", "bathroom"}
    for seed in range(10):
        g = generate_world(WorldSpec(seed=400 + seed, num_rooms=8, num_halls=1))
        for t in g.triplets:
            src_type = t.src.location_type
            if src_type in place_types:
                assert t.behavior in {"oo-left", "oo-right", "oio"}
            elif src_type == "hall":
                assert t.behavior in {"ch-left", "ch-right"}
            else:  # corridor
                assert t.behavior in {"cf", "lt", "rt", "sp", "io-left", "io-right"}
            if t.behavior in {"io-left", "io-right"}:
                assert t.dst.location_type in place_types
            if t.behavior == "oio":
                assert t.dst.location_type in place_types


# -- synthesize_instruction ---------------------------------------------------------


def test_single_behavior_instruction_mentions_exit_right(chain_graph):
    plan = NavPlan(node("R-1"), ("oo-right",))
    text = synthesize_instruction(chain_graph, plan, style_seed=0)
    assert "right" in text.lower()
    assert parse_instruction(text) == ["oo-right"]


def test_different_seeds_different_surface_same_plan(chain_graph):
    plan = NavPlan(node("R-1"), ("oo-right", "cf", "lt", "cf", "io-left"))
    texts = {synthesize_instruction(chain_graph, plan, s) for s in range(6)}
    assert len(texts) > 1
    for text in texts:
        assert tuple(parse_instruction(text, chain_graph, plan.start)) == plan.behaviors


def test_deterministic_per_seed(chain_graph):
    plan = NavPlan(node("R-1"), ("oo-right", "cf", "lt"))
    a = synthesize_instruction(chain_graph, plan, 42)
    b = synthesize_instruction(chain_graph, plan, 42)
    assert a == b


def test_landmark_mention_possible(chain_graph):
    # the C-1 -> C-2 edge carries a vase; some style seed should surface it
    plan = NavPlan(node("R-1"), ("oo-right", "cf", "lt"))
    texts = [synthesize_instruction(chain_graph, plan, s) for s in range(40)]
    assert any("vase" in t for t in texts)


def test_inverse_roundtrip_over_generated_corpus():
    rng = np.random.default_rng(3)
    count = 0
    for seed in range(6):
        g = generate_world(WorldSpec(seed=300 + seed, num_rooms=7))
        for _ in range(8):
            i, j = rng.choice(g.num_nodes, size=2, replace=False)
            plan = g.shortest_path(g.nodes[int(i)], g.nodes[int(j)])
            if not plan.behaviors:
                continue
            style = int(rng.integers(2**31))
            text = synthesize_instruction(g, plan, style)
            assert tuple(parse_instruction(text, g, plan.start)) == plan.behaviors
            count += 1
    assert count > 30


def _straight_run_graph():
    nodes = [node(t) for t in ("C-0", "C-1", "C-2", "C-3", "R-0", "R-1")]
    triplets = [
        edge("R-0", "oo-left", "C-0"),
        edge("C-0", "cf", "C-1"),
        edge("C-1", "sp", "C-2"),
        edge("C-2", "cf", "C-3"),
        edge("C-3", "io-right", "R-1"),
    ]
    from navtrans.graph import BehavioralGraph

    return BehavioralGraph("runs", nodes, triplets)


def test_merged_straight_runs_recoverable():
    # plan with a cf sp cf run; both merge styles must round-trip
    g = _straight_run_graph()
    plan = NavPlan(node("R-0"), ("oo-left", "cf", "sp", "cf", "io-right"))
    counted = ambiguous = 0
    for seed in range(40):
        text = synthesize_instruction(g, plan, seed)
        assert tuple(parse_instruction(text, g, plan.start)) == plan.behaviors
        if "1 intersection" in text or "1 junction" in text:
            counted += 1
        if any(phrase in text.lower() for phrase in ("advance forward", "go straight ahead", "keep going straight")):
            ambiguous += 1
    assert counted > 0
    assert ambiguous > 0


def test_ambiguous_run_requires_graph():
    g = _straight_run_graph()
    plan = NavPlan(node("R-0"), ("oo-left", "cf", "sp", "cf", "io-right"))
    ambiguous_text = next(
        text
        for text in (synthesize_instruction(g, plan, s) for s in range(60))
        if "advance forward" in text.lower()
        or "go straight ahead" in text.lower()
        or "keep going straight" in text.lower()
    )
    with pytest.raises(ParseError, match="graph"):
        parse_instruction(ambiguous_text)
    assert tuple(parse_instruction(ambiguous_text, g, plan.start)) == plan.behaviors


# -- normalize_text ---------------------------------------------------------------


def test_normalize_example():
    assert normalize_text("Turn Right, then advance.") == [
        "turn",
        "right",
        ",",
        "then",
        "advance",
        ".",
    ]


def test_normalize_lemma():
    assert normalize_text("rooms") == ["room"]
    assert normalize_text("Exiting the offices") == ["exit", "the", "office"]


def test_normalize_empty():
    assert normalize_text("") == []
    assert normalize_text("   ") == []


def test_lemma_values_are_fixed_points():
    for value in LEMMAS.values():
        assert value not in LEMMAS
        assert normalize_text(value) == [value]


@given(st.text(max_size=80))
@settings(max_examples=200, deadline=None)
def test_normalize_idempotent(text):
    once = normalize_text(text)
    again = normalize_text(" ".join(once))
    assert once == again


def test_normalize_idempotent_on_synthesized(chain_graph):
    plan = NavPlan(node("R-1"), ("oo-right", "cf", "lt", "cf", "io-left"))
    for seed in range(10):
        text = synthesize_instruction(chain_graph, plan, seed)
        once = normalize_text(text)
        assert normalize_text(" ".join(once)) == once


# -- build_dataset -----------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_dataset():
    return build_dataset(2, 1, 6, 0.5, seed=77)


def test_build_counts(tiny_dataset):
    training, rep, new = tiny_dataset
    singles, doubles, total = split_counts(training)
    assert singles + doubles == 12  # 2 graphs x 6 plans
    assert doubles == 6  # double_fraction 0.5
    assert total == singles + 2 * doubles
    assert len(rep.samples) == 2 * 1  # default: routes_per_graph // 5
    assert len(new.samples) == 6


def test_double_fraction_zero():
    training, _, _ = build_dataset(1, 1, 4, 0.0, seed=3)
    singles, doubles, total = split_counts(training)
    assert doubles == 0 and singles == 4 and total == 4


def test_table2_style_arithmetic():
    # the published dataset's training row: 4062 singles + 2002 doubles
    singles, doubles = 4062, 2002
    assert singles + 2 * doubles == 8066
    table = format_counts_table([])
    assert table.startswith("split")


def test_gold_plans_execute(tiny_dataset):
    for split in tiny_dataset:
        graphs = split.graphs_by_id()
        for s in split.samples:
            nodes = graphs[s.graph_id].execute_plan(s.plan)
            assert nodes[0] == s.start
            assert s.instruction.strip()


def test_instructions_fit_token_budget(tiny_dataset):
    for split in tiny_dataset:
        for s in split.samples:
            assert len(normalize_text(s.instruction)) <= 150


def test_split_hygiene(tiny_dataset):
    training, rep, new = tiny_dataset
    check_split_hygiene(training, rep, new)
    assert not (training.route_keys() & rep.route_keys())
    train_ids = {g.graph_id for g in training.graphs}
    assert {s.graph_id for s in rep.samples} <= train_ids
    assert not ({s.graph_id for s in new.samples} & train_ids)


def test_double_instructions_distinct(tiny_dataset):
    training = tiny_dataset[0]
    by_route = {}
    for s in training.samples:
        by_route.setdefault((s.graph_id, s.start.tag, s.plan.behaviors), []).append(
            s.instruction
        )
    doubles = [texts for texts in by_route.values() if len(texts) == 2]
    assert doubles
    for texts in doubles:
        assert texts[0] != texts[1]


def test_build_deterministic():
    a = build_dataset(1, 1, 3, 0.0, seed=8)
    b = build_dataset(1, 1, 3, 0.0, seed=8)
    assert [s.instruction for s in a[0].samples] == [s.instruction for s in b[0].samples]
    assert [s.plan for s in a[0].samples] == [s.plan for s in b[0].samples]


def test_suboptimal_routes_present():
    training, _, _ = build_dataset(2, 1, 10, 0.0, seed=13, suboptimal_fraction=0.5)
    graphs = training.graphs_by_id()
    longer = 0
    for s in training.samples:
        g = graphs[s.graph_id]
        shortest = g.shortest_path(s.start, g.execute_plan(s.plan)[-1])
        assert len(s.plan.behaviors) >= len(shortest.behaviors)
        if len(s.plan.behaviors) > len(shortest.behaviors):
            longer += 1
    assert longer > 0


# -- sample file IO -----------------------------------------------------------------


def test_samples_roundtrip(tmp_path, tiny_dataset):
    training = tiny_dataset[0]
    path = tmp_path / "train.samples"
    write_samples(training, path)
    back = read_samples(path, training.graphs_by_id(), "training")
    assert back.samples == training.samples


def test_samples_malformed_behavior_token(tmp_path, tiny_dataset):
    training = tiny_dataset[0]
    s = training.samples[0]
    line = f'graph={s.graph_id} start={s.start.tag} plan=cf warp text="go"\n'
    path = tmp_path / "bad.samples"
    path.write_text(line)
    with pytest.raises(ParseError, match="'warp'"):
        read_samples(path, training.graphs_by_id(), "training")


def test_samples_missing_graph(tmp_path):
    path = tmp_path / "orphan.samples"
    path.write_text('graph=ghost start=R-0 plan=cf text="go"\n')
    with pytest.raises(MissingGraph):
        read_samples(path, {}, "training")


def test_samples_invalid_gold_plan(tmp_path, tiny_dataset):
    training = tiny_dataset[0]
    g = training.graphs[0]
    start = next(n for n in g.nodes if n.location_type == "room")
    path = tmp_path / "bad.samples"
    path.write_text(f'graph={g.graph_id} start={start.tag} plan=ch-left text="go"\n')
    with pytest.raises(ParseError, match="invalid"):
        read_samples(path, training.graphs_by_id(), "training")


def test_dataset_directory_roundtrip(tmp_path, tiny_dataset):
    out = tmp_path / "data"
    write_dataset(list(tiny_dataset), out)
    splits = read_dataset(out)
    assert set(splits) == {"training", "test-repeated", "test-new"}
    for original in tiny_dataset:
        back = splits[original.name]
        assert back.samples == original.samples
        assert {g.graph_id for g in back.graphs} == {
            g.graph_id for g in original.graphs
        }
