"""Templated English instructions for navigation plans, plus their inverse.

Every behavior has a small bank of clause templates. A synthesized instruction
is a deterministic function of (graph, plan, style_seed): the seed picks
templates, optional landmark mentions, clause merging for straight runs, and
sentence structure.

Straight runs (cf, optionally alternating with sp at junctions) can merge into
a single clause two ways: with an explicit junction count, or as a bare
"advance forward"-style phrase that does not say how many junctions to cross.
The bare form is deliberately ambiguous from text alone; resolving it needs
the map, which is what `parse_instruction(text, graph, start)` does. Synthesis
only emits the ambiguous form when that graph-aware inverse provably recovers
the exact plan, so round trips stay lossless.
"""

from __future__ import annotations

import re

import numpy as np

from .errors import EmptyInstruction, ParseError
from .graph import LANDMARKS, BehavioralGraph, NavPlan

# Clause templates. Keep "then" and "after" out of clause bodies: they are
# reserved as clause separators so the inverse can split unambiguously.
TEMPLATES: dict[str, tuple[str, ...]] = {
    "oo-left": (
        "go out and turn left",
        "exit the {src} and turn left",
        "leave the {src} and make a left",
        "walk out of the {src} and head left",
    ),
    "oo-right": (
        "go out and turn right",
        "exit the {src} and turn right",
        "leave the {src} and make a right",
        "walk out of the {src} and head right",
    ),
    "io-left": (
        "turn left and enter the {dst}",
        "enter the {dst} on your left",
        "go into the {dst} on the left",
    ),
    "io-right": (
        "turn right and enter the {dst}",
        "enter the {dst} on your right",
        "go into the {dst} on the right",
    ),
    "oio": (
        "exit and enter the {dst} straight ahead",
        "go out and walk straight into the {dst}",
        "leave and cross over into the {dst} ahead",
    ),
    "lt": (
        "turn left at the intersection",
        "make a left at the junction",
        "take a left",
    ),
    "rt": (
        "turn right at the intersection",
        "make a right at the junction",
        "take a right",
    ),
    "cf": (
        "follow the corridor",
        "go straight down the corridor",
        "continue down the corridor",
    ),
    "sp": (
        "go straight at the intersection",
        "continue straight through the junction",
        "keep straight past the intersection",
    ),
    "ch-left": (
        "cross the hall and turn left",
        "walk across the hall and make a left",
    ),
    "ch-right": (
        "cross the hall and turn right",
        "walk across the hall and make a right",
    ),
}

# A straight run cf (sp cf)*k can merge into one clause, either with an
# explicit junction count (recoverable from text alone) or as a bare phrase
# that leaves the junction count to the map.
MERGED_TEMPLATES = (
    "follow the corridor crossing {k} intersection{s}",
    "go straight down the corridor past {k} intersection{s}",
    "go straight ahead through {k} junction{s}",
)

AMBIGUOUS_RUN_TEMPLATES = (
    "advance forward",
    "go straight ahead",
    "keep going straight",
)

LANDMARK_SUFFIXES = (
    " past the {lm}",
    " passing a {lm}",
    " where you see a {lm}",
)

_PLACE_RE = r"(?:room|lab|office|kitchen|hall|corridor|bathroom)(?: \d+)?"
_LM_RE = "(?:" + "|".join(re.escape(lm) for lm in LANDMARKS) + ")"
_LM_SUFFIX_RE = re.compile(
    r"(?: past the | passing a | where you see a )" + _LM_RE + r"\Z"
)


def _compile(template: str) -> re.Pattern:
    pat = re.escape(template)
    pat = pat.replace(re.escape("{src}"), _PLACE_RE)
    pat = pat.replace(re.escape("{dst}"), _PLACE_RE)
    pat = pat.replace(re.escape("{k}"), r"(\d+)")
    pat = pat.replace(re.escape("{s}"), r"s?")
    return re.compile(pat + r"\Z")


_CLAUSE_PATTERNS = [
    (_compile(tpl), behavior)
    for behavior, bank in sorted(TEMPLATES.items())
    for tpl in bank
]
_MERGED_PATTERNS = [_compile(tpl) for tpl in MERGED_TEMPLATES]
_AMBIGUOUS_PATTERNS = [_compile(tpl) for tpl in AMBIGUOUS_RUN_TEMPLATES]


def _pick(rng: np.random.Generator, options):
    return options[int(rng.integers(len(options)))]


def _spoken(node, rng: np.random.Generator) -> str:
    if node.location_type in ("kitchen", "bathroom"):
        return node.location_type
    if rng.random() < 0.5:
        return f"{node.location_type} {node.index}"
    return node.location_type


def synthesize_instruction(g: BehavioralGraph, plan: NavPlan, style_seed: int) -> str:
    """Render `plan` as an English instruction, deterministic per (plan, seed).

    Ambiguous straight-run phrasings are only kept when the graph-aware inverse
    recovers exactly this plan; otherwise the same seed re-renders with
    unambiguous clauses.
    """
    text = _synthesize(g, plan, style_seed, allow_ambiguous=True)
    try:
        if tuple(parse_instruction(text, g, plan.start)) == plan.behaviors:
            return text
    except ParseError:
        pass
    return _synthesize(g, plan, style_seed, allow_ambiguous=False)


def _synthesize(g, plan, style_seed, allow_ambiguous):
    rng = np.random.default_rng([int(style_seed) % 2**32, 911])
    nodes = g.execute_plan(plan)
    triplets = [g.triplet_at(nodes[i], b) for i, b in enumerate(plan.behaviors)]

    clauses: list[str] = []
    i = 0
    while i < len(plan.behaviors):
        b = plan.behaviors[i]
        if b in ("cf", "sp"):
            j = i
            run = []
            while j < len(plan.behaviors) and plan.behaviors[j] in ("cf", "sp"):
                run.append(plan.behaviors[j])
                j += 1
            k = run.count("sp")
            alternating = run == ["cf"] + ["sp", "cf"] * k
            roll = rng.random()
            if allow_ambiguous and roll < 0.65:
                clause = _pick(rng, AMBIGUOUS_RUN_TEMPLATES)
                # landmark mentions are the graph-groundable cue for how far
                # "straight ahead" extends, so runs get them more often
                clause += _landmark_suffix(rng, triplets[i:j], prob=0.65)
                clauses.append(clause)
                i = j
                continue
            if alternating and k >= 1 and roll < 0.85:
                tpl = _pick(rng, MERGED_TEMPLATES)
                clause = tpl.format(k=k, s="" if k == 1 else "s")
                clause += _landmark_suffix(rng, triplets[i:j])
                clauses.append(clause)
                i = j
                continue
        tpl = _pick(rng, TEMPLATES[b])
        clause = tpl.format(
            src=_spoken(triplets[i].src, rng), dst=_spoken(triplets[i].dst, rng)
        )
        clause += _landmark_suffix(rng, [triplets[i]])
        clauses.append(clause)
        i += 1

    sentences = []
    while clauses:
        n = min(int(rng.integers(1, 4)), len(clauses))
        batch, clauses = clauses[:n], clauses[n:]
        if len(batch) == 2 and rng.random() < 0.25:
            sentence = f"{batch[1]} after you {batch[0]}"
        else:
            sentence = batch[0]
            for clause in batch[1:]:
                sentence += _pick(rng, (", then ", " and then ")) + clause
        sentences.append(sentence[0].upper() + sentence[1:])
    return ". ".join(sentences) + "."


def _landmark_suffix(rng: np.random.Generator, triplets, prob: float = 0.35) -> str:
    attrs = sorted({lm for t in triplets for lm in t.attrs})
    if not attrs or rng.random() >= prob:
        return ""
    return _pick(rng, LANDMARK_SUFFIXES).format(lm=_pick(rng, attrs))


_RUN = object()  # marker for an ambiguous straight-run clause


def parse_instruction(
    text: str,
    graph: BehavioralGraph | None = None,
    start=None,
    max_run_len: int = 10,
) -> list[str]:
    """Invert `synthesize_instruction`: recover the behavior sequence.

    Unambiguous instructions parse from text alone. Instructions containing an
    ambiguous straight-run clause ("advance forward", ...) additionally need
    the graph and the start node: the run expands to the shortest executable
    walk over cf/sp that lets the rest of the instruction execute.
    """
    body = text.strip().lower()
    body = re.sub(r"\.\s*\Z", "", body)
    if not body:
        raise ParseError("empty instruction")
    items: list = []
    for sentence in body.split(". "):
        if " after you " in sentence:
            later, earlier = sentence.split(" after you ", 1)
            parts = [earlier, later]
        else:
            parts = re.split(r", then | and then ", sentence)
        for clause in parts:
            items.append(_parse_clause(clause.strip()))

    if all(item is not _RUN for item in items):
        return [b for item in items for b in item]
    if graph is None or start is None:
        raise ParseError(
            "instruction contains an ambiguous straight-run clause; "
            "resolving it requires the graph and the start node"
        )
    return _resolve(items, graph, start, max_run_len)


def _resolve(items, graph, start, max_run_len):
    from .errors import NoSuchEdge

    def step(node, b):
        try:
            return graph.transition(node, b)
        except NoSuchEdge:
            return None

    def run_walks(node):
        """Nonempty straight walks (cf/sp only) from node, shortest first,
        cf before sp within a length."""
        frontier = [((), node)]
        for _ in range(max_run_len):
            grown = []
            for walk, cur in frontier:
                for b in ("cf", "sp"):
                    nxt = step(cur, b)
                    if nxt is not None:
                        grown.append((walk + (b,), nxt))
            for walk, cur in grown:
                yield walk, cur
            frontier = grown
            if not frontier:
                return

    def search(node, i):
        if i == len(items):
            return ()
        item = items[i]
        if item is not _RUN:
            cur = node
            for b in item:
                cur = step(cur, b)
                if cur is None:
                    return None
            rest = search(cur, i + 1)
            return tuple(item) + rest if rest is not None else None
        for walk, cur in run_walks(node):
            rest = search(cur, i + 1)
            if rest is not None:
                return walk + rest
        return None

    out = search(start, 0)
    if out is None:
        raise ParseError("could not resolve the instruction against the graph")
    return list(out)


def _parse_clause(clause: str):
    stripped = _LM_SUFFIX_RE.sub("", clause)
    for pattern in _AMBIGUOUS_PATTERNS:
        if pattern.fullmatch(stripped):
            return _RUN
    for pattern in _MERGED_PATTERNS:
        m = pattern.fullmatch(stripped)
        if m:
            k = int(m.group(1))
            return ["cf"] + ["sp", "cf"] * k
    for pattern, behavior in _CLAUSE_PATTERNS:
        if pattern.fullmatch(stripped):
            return [behavior]
    raise ParseError(f"unrecognized clause {clause!r}")


# -- normalization -------------------------------------------------------------

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*|[^\sa-z0-9]")

# Small fixed lemma table: plural nouns and inflected verbs seen in route
# language. Values are fixed points of the table, which makes normalize_text
# idempotent. No external lexical database is consulted.
LEMMAS = {
    "rooms": "room",
    "labs": "lab",
    "offices": "office",
    "kitchens": "kitchen",
    "halls": "hall",
    "corridors": "corridor",
    "bathrooms": "bathroom",
    "hallways": "hallway",
    "doors": "door",
    "paintings": "painting",
    "bookshelves": "bookshelf",
    "bookshelfs": "bookshelf",
    "tables": "table",
    "chairs": "chair",
    "sofas": "sofa",
    "plants": "plant",
    "vases": "vase",
    "lamps": "lamp",
    "whiteboards": "whiteboard",
    "windows": "window",
    "clocks": "clock",
    "posters": "poster",
    "cabinets": "cabinet",
    "printers": "printer",
    "couches": "couch",
    "mirrors": "mirror",
    "rugs": "rug",
    "intersections": "intersection",
    "junctions": "junction",
    "corners": "corner",
    "turns": "turn",
    "turning": "turn",
    "turned": "turn",
    "goes": "go",
    "going": "go",
    "exits": "exit",
    "exited": "exit",
    "exiting": "exit",
    "enters": "enter",
    "entered": "enter",
    "entering": "enter",
    "walks": "walk",
    "walked": "walk",
    "walking": "walk",
    "follows": "follow",
    "followed": "follow",
    "following": "follow",
    "leaves": "leave",
    "leaving": "leave",
    "heads": "head",
    "heading": "head",
    "continues": "continue",
    "continuing": "continue",
    "passes": "pass",
    "passed": "pass",
    "advances": "advance",
    "advancing": "advance",
    "makes": "make",
    "making": "make",
    "takes": "take",
    "taking": "take",
    "crosses": "cross",
    "crossed": "cross",
}


def normalize_text(instruction: str) -> list[str]:
    """Lowercase, split words and punctuation into tokens, apply the lemma table."""
    tokens = _TOKEN_RE.findall(instruction.lower())
    return [LEMMAS.get(tok, tok) for tok in tokens]


def require_tokens(instruction: str) -> list[str]:
    tokens = normalize_text(instruction)
    if not tokens:
        raise EmptyInstruction("instruction normalized to zero tokens")
    return tokens
