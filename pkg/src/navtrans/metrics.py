"""Evaluation metrics over behavior-token sequences: exact match, token F1,
edit distance, and goal match, plus split-level aggregation and CSV export.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import InvalidPlan, MissingGraph
from .graph import BehavioralGraph, NavPlan, NodeId


def exact_match(pred, gold) -> int:
    """1 iff the behavior sequences are identical, token for token."""
    return int(tuple(pred) == tuple(gold))


def matched_tokens(pred, gold) -> int:
    """Size of the multiset intersection of the two token sequences."""
    return sum((Counter(pred) & Counter(gold)).values())


def f1_score(pred, gold) -> float:
    """Per-pair F1 from multiset precision/recall; 0 when both are undefined."""
    m = matched_tokens(pred, gold)
    p = m / len(pred) if pred else 0.0
    r = m / len(gold) if gold else 0.0
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def edit_distance(pred, gold) -> int:
    """Levenshtein distance with unit-cost insert, delete, and substitute."""
    a, b = list(pred), list(gold)
    if len(a) > len(b):
        a, b = b, a
    prev = list(range(len(a) + 1))
    for j, tb in enumerate(b, start=1):
        cur = [j]
        for i, ta in enumerate(a, start=1):
            if ta == tb:
                cur.append(prev[i - 1])
            else:
                cur.append(1 + min(prev[i - 1], prev[i], cur[-1]))
        prev = cur
    return prev[-1]


def goal_match(g: BehavioralGraph, start: NodeId, pred, gold) -> int:
    """1 iff pred executes without error and ends at gold's final node."""
    gold_nodes = g.execute_plan(NavPlan(start, tuple(gold)))
    try:
        pred_nodes = g.execute_plan(NavPlan(start, tuple(pred)))
    except InvalidPlan:
        return 0
    return int(pred_nodes[-1] == gold_nodes[-1])


@dataclass
class SampleResult:
    sample_id: str
    em: int
    f1_p: float
    f1_r: float
    ed: int
    gm: int
    pred: tuple[str, ...]
    gold: tuple[str, ...]
    matched: int

    def csv_row(self) -> str:
        return (
            f"{self.sample_id},{self.em},{self.f1_p:.6f},{self.f1_r:.6f},"
            f"{self.ed},{self.gm},{' '.join(self.pred)},{' '.join(self.gold)}"
        )


CSV_HEADER = "sample_id,em,f1_p,f1_r,ed,gm,pred_plan,gold_plan"


@dataclass
class MetricReport:
    """Split-level metrics: EM/GM as sample fractions, ED as a mean, F1 micro-
    aggregated over token counts."""

    name: str
    n: int
    em: float
    f1: float
    ed: float
    gm: float
    results: list[SampleResult] = field(default_factory=list)

    @classmethod
    def from_results(cls, name: str, results) -> "MetricReport":
        results = list(results)
        n = len(results)
        if n == 0:
            return cls(name, 0, 0.0, 0.0, 0.0, 0.0, [])
        total_matched = sum(r.matched for r in results)
        total_pred = sum(len(r.pred) for r in results)
        total_gold = sum(len(r.gold) for r in results)
        p = total_matched / total_pred if total_pred else 0.0
        r = total_matched / total_gold if total_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(
            name=name,
            n=n,
            em=sum(x.em for x in results) / n,
            f1=f1,
            ed=sum(x.ed for x in results) / n,
            gm=sum(x.gm for x in results) / n,
            results=results,
        )

    def samples_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_row() for r in self.results]) + "\n"

    def summary_row(self) -> str:
        return (
            f"{self.name},{self.n},{100 * self.em:.2f},{100 * self.f1:.2f},"
            f"{self.ed:.4f},{100 * self.gm:.2f}"
        )

    def format_table_row(self) -> str:
        return (
            f"{self.name:<14} {self.n:>6} {100 * self.em:>7.2f} {100 * self.f1:>7.2f} "
            f"{self.ed:>7.4f} {100 * self.gm:>7.2f}"
        )


SUMMARY_HEADER = "split,n,em_pct,f1_pct,ed,gm_pct"
TABLE_HEADER = f"{'split':<14} {'n':>6} {'EM%':>7} {'F1%':>7} {'ED':>7} {'GM%':>7}"


def evaluate(plan_source, split) -> MetricReport:
    """Score a plan source (sample, graph) -> behaviors over a dataset split."""
    graphs = split.graphs_by_id()
    results = []
    for i, sample in enumerate(split.samples):
        g = graphs.get(sample.graph_id)
        if g is None:
            raise MissingGraph(f"split {split.name} lacks graph {sample.graph_id}")
        pred = tuple(plan_source(sample, g))
        gold = sample.plan.behaviors
        m = matched_tokens(pred, gold)
        results.append(
            SampleResult(
                sample_id=f"{split.name}-{i:05d}",
                em=exact_match(pred, gold),
                f1_p=m / len(pred) if pred else 0.0,
                f1_r=m / len(gold) if gold else 0.0,
                ed=edit_distance(pred, gold),
                gm=goal_match(g, sample.start, pred, gold),
                pred=pred,
                gold=gold,
                matched=m,
            )
        )
    return MetricReport.from_results(split.name, results)


def evaluate_model(model, split) -> MetricReport:
    """Evaluate any object exposing plan_for(sample, graph)."""
    return evaluate(model.plan_for, split)
