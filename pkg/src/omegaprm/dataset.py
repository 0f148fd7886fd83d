"""Question filtering, tree-to-dataset conversion, and JSONL I/O.

A tree edge becomes a pointwise training example when its action is a
single step, i.e. its token length is below the tree's binary-search
threshold. Sibling single-step edges of a node additionally yield pairwise
preference examples via the Bernoulli normalization (1 + p - q) / 2.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .core import Question, State
from .errors import (
    EstimationFailed,
    InvalidProbability,
    ParseError,
    TargetTooLarge,
)
from .mcts import Tree, monte_carlo_estimate
import random


@dataclass(frozen=True)
class TrainingExample:
    question_id: str
    question: str
    prefix_text: str
    step_text: str
    mc_value: float
    hard_label: int
    meta: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class PreferencePair:
    question_id: str
    question: str
    prefix_text: str
    step_a: str
    step_b: str
    pref_a: float

    @property
    def pref_b(self) -> float:
        return 1.0 - self.pref_a


@dataclass
class FilterRecord:
    question_id: str
    kept: bool
    correct_count: int
    reason: str  # "", "too_hard", "too_easy", or "unresolved"


def filter_questions(corpus, completer, k_filter: int = 32, budget=None):
    """Drop questions that are too hard (0 correct of k_filter root
    rollouts) or too easy (all correct). Returns (kept, report)."""
    if k_filter < 2:
        raise ValueError("k_filter must be >= 2")
    kept = []
    report = []
    for question in corpus:
        root = State(question_id=question.id)
        try:
            mc, _ = monte_carlo_estimate(completer, root, k_filter, budget)
        except EstimationFailed:
            report.append(FilterRecord(question.id, False, -1, "unresolved"))
            continue
        correct = mc.numerator * k_filter // mc.denominator
        if mc == 0:
            report.append(FilterRecord(question.id, False, correct, "too_hard"))
        elif mc == 1:
            report.append(FilterRecord(question.id, False, correct, "too_easy"))
        else:
            kept.append(question)
            report.append(FilterRecord(question.id, True, correct, ""))
    return kept, report


def _single_step_edges(tree: Tree):
    for parent, edge in tree.iter_edges():
        if edge.child.mc is None:
            continue
        if edge.action_token_len < tree.threshold:
            yield parent, edge


def tree_to_examples(tree: Tree):
    """One pointwise example per single-step edge; multi-step edges are
    skipped rather than re-split (their interior MC was never computed)."""
    examples = []
    for parent, edge in _single_step_edges(tree):
        mc = edge.child.mc
        examples.append(TrainingExample(
            question_id=tree.question.id,
            question=tree.question.statement,
            prefix_text=parent.state.prefix_text,
            step_text=edge.action_text,
            mc_value=float(mc),
            hard_label=int(mc > 0),
            meta={"prefix_token_len": parent.state.prefix_token_len},
        ))
    return examples


def normalize_pair(p: float, q: float):
    """Bernoulli preference normalization: ((1+p-q)/2, (1+q-p)/2)."""
    if not (0 <= p <= 1) or not (0 <= q <= 1):
        raise InvalidProbability("pair probabilities must lie in [0, 1]")
    pref_x = (1.0 + p - q) / 2.0
    return pref_x, 1.0 - pref_x


def tree_to_pairs(tree: Tree):
    """All unordered pairs of sibling single-step actions."""
    by_parent = {}
    for parent, edge in _single_step_edges(tree):
        by_parent.setdefault(parent.state.key(), (parent, []))[1].append(edge)
    pairs = []
    for parent, edges in by_parent.values():
        for i in range(len(edges)):
            for j in range(i + 1, len(edges)):
                a, b = edges[i], edges[j]
                pref_a, _ = normalize_pair(float(a.child.mc), float(b.child.mc))
                pairs.append(PreferencePair(
                    question_id=tree.question.id,
                    question=tree.question.statement,
                    prefix_text=parent.state.prefix_text,
                    step_a=a.action_text,
                    step_b=b.action_text,
                    pref_a=pref_a,
                ))
    return pairs


def downsample(examples, target_count: int, seed: int):
    """Seeded uniform subset without replacement, preserving input order."""
    if target_count > len(examples):
        raise TargetTooLarge(
            f"target {target_count} exceeds dataset size {len(examples)}"
        )
    rng = random.Random(seed)
    idxs = sorted(rng.sample(range(len(examples)), target_count))
    return [examples[i] for i in idxs]


# -- JSONL I/O -------------------------------------------------------------

_EXAMPLE_FIELDS = ("question_id", "question", "prefix", "step", "mc", "hard_label")
_PAIR_FIELDS = ("question_id", "question", "prefix", "step_a", "step_b", "pref_a")


def example_to_record(ex: TrainingExample):
    return {
        "question_id": ex.question_id,
        "question": ex.question,
        "prefix": ex.prefix_text,
        "step": ex.step_text,
        "mc": ex.mc_value,
        "hard_label": ex.hard_label,
    }


def pair_to_record(pair: PreferencePair):
    return {
        "question_id": pair.question_id,
        "question": pair.question,
        "prefix": pair.prefix_text,
        "step_a": pair.step_a,
        "step_b": pair.step_b,
        "pref_a": pair.pref_a,
    }


def _write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False))
            fh.write("\n")


def _read_jsonl(path, required_fields):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}", line=lineno) from exc
            missing = [f for f in required_fields if f not in rec]
            if missing:
                raise ParseError(
                    f"line {lineno}: missing fields {missing}", line=lineno
                )
            records.append(rec)
    return records


def export_examples_jsonl(examples, path):
    _write_jsonl((example_to_record(ex) for ex in examples), path)


def import_examples_jsonl(path):
    return [
        TrainingExample(
            question_id=rec["question_id"],
            question=rec["question"],
            prefix_text=rec["prefix"],
            step_text=rec["step"],
            mc_value=rec["mc"],
            hard_label=rec["hard_label"],
        )
        for rec in _read_jsonl(path, _EXAMPLE_FIELDS)
    ]


def export_pairs_jsonl(pairs, path):
    _write_jsonl((pair_to_record(p) for p in pairs), path)


def import_pairs_jsonl(path):
    return [
        PreferencePair(
            question_id=rec["question_id"],
            question=rec["question"],
            prefix_text=rec["prefix"],
            step_a=rec["step_a"],
            step_b=rec["step_b"],
            pref_a=rec["pref_a"],
        )
        for rec in _read_jsonl(path, _PAIR_FIELDS)
    ]


def export_filter_report(report, path):
    _write_jsonl(
        (
            {
                "question_id": rec.question_id,
                "kept": rec.kept,
                "correct_count": rec.correct_count,
                "reason": rec.reason,
            }
            for rec in report
        ),
        path,
    )


def export_corpus_jsonl(questions, path, chains=None):
    records = []
    for q in questions:
        rec = {
            "id": q.id,
            "statement": q.statement,
            "golden_answer": q.golden_answer,
        }
        if chains and q.id in chains:
            rec["chain"] = chains[q.id]
        records.append(rec)
    _write_jsonl(records, path)


def import_corpus_jsonl(path):
    """Read questions (and, when present, simulator ground chains)."""
    questions = []
    chains = {}
    for rec in _read_jsonl(path, ("id", "statement", "golden_answer")):
        questions.append(Question(
            id=rec["id"],
            statement=rec["statement"],
            golden_answer=rec["golden_answer"],
        ))
        if "chain" in rec:
            chains[rec["id"]] = list(rec["chain"])
    return questions, chains
