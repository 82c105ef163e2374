"""Scoring: exact/partial triple matching and sliced micro-averaged reports.

Exact mode credits a prediction when both full spans and the relation
equal a gold triple; partial mode compares only the head word of each
entity (under the corpus head-word rule) plus the relation. Micro averages
throughout; every slice (overlap pattern, triple count) partitions the
examples, so slice counts recombine to the overall counts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .data import PATTERNS, head_word_index
from .errors import ContractError

MODES = ("exact", "partial")
COUNT_BUCKETS = ("1", "2", "3", "4", ">=5")


def _count_bucket(count):
    return str(count) if count < 5 else ">=5"


def _dedup_exact(preds):
    seen = set()
    out = []
    for p in preds:
        if p.key() not in seen:
            seen.add(p.key())
            out.append(p)
    return out


def _pred_key(pred, mode, head_word):
    if mode == "exact":
        return pred.key()
    return (head_word_index((pred.ss, pred.se), head_word), pred.rel,
            head_word_index((pred.os, pred.oe), head_word))


def _gold_key(gold, mode, head_word):
    if mode == "exact":
        return gold.key()
    return (head_word_index(gold.subject_span, head_word), gold.rel,
            head_word_index(gold.object_span, head_word))


def match_triples(preds, golds, mode, head_word="last"):
    """(correct, predicted, gold) counts for one sentence.

    Predictions are deduplicated (set semantics); each gold is credited at
    most once.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    preds = _dedup_exact(list(preds))
    pred_keys = Counter(_pred_key(p, mode, head_word) for p in preds)
    gold_keys = Counter(_gold_key(g, mode, head_word) for g in golds)
    correct = sum(min(c, gold_keys[k]) for k, c in pred_keys.items())
    return correct, sum(pred_keys.values()), sum(gold_keys.values())


@dataclass
class PRF:
    """Micro precision/recall/F1 with the raw counts they came from."""

    correct: int = 0
    predicted: int = 0
    gold: int = 0

    def add(self, correct, predicted, gold):
        self.correct += correct
        self.predicted += predicted
        self.gold += gold

    @property
    def precision(self):
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self):
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self):
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "correct": self.correct, "predicted": self.predicted, "gold": self.gold}


@dataclass
class EvalReport:
    """Overall and sliced scores for both matching modes."""

    overall: dict = field(default_factory=lambda: {m: PRF() for m in MODES})
    per_pattern: dict = field(default_factory=lambda: {
        m: {p: PRF() for p in PATTERNS} for m in MODES})
    per_count: dict = field(default_factory=lambda: {
        m: {b: PRF() for b in COUNT_BUCKETS} for m in MODES})

    def f1(self, mode="exact"):
        return self.overall[mode].f1

    def to_dict(self):
        return {
            "overall": {m: s.to_dict() for m, s in self.overall.items()},
            "per_pattern": {m: {p: s.to_dict() for p, s in d.items()}
                            for m, d in self.per_pattern.items()},
            "per_count": {m: {b: s.to_dict() for b, s in d.items()}
                          for m, d in self.per_count.items()},
        }


def compute_report(scored, head_word="last"):
    """Aggregate (example, predictions) pairs into an EvalReport."""
    report = EvalReport()
    for example, preds in scored:
        bucket = _count_bucket(example.triple_count)
        for mode in MODES:
            counts = match_triples(preds, example.golds, mode, head_word=head_word)
            report.overall[mode].add(*counts)
            report.per_pattern[mode][example.overlap_pattern].add(*counts)
            report.per_count[mode][bucket].add(*counts)
    return report


def evaluate_model(model, examples):
    """Predict every example with the model and score the lot."""
    scored = [(ex, model.predict_example(ex)) for ex in examples]
    return compute_report(scored, head_word=model.config.head_word)


def format_report(report, breakdown=False):
    lines = []
    for mode in MODES:
        s = report.overall[mode]
        lines.append(f"{mode:8s} P {s.precision:6.4f}  R {s.recall:6.4f}  "
                     f"F1 {s.f1:6.4f}  (correct {s.correct} / pred {s.predicted} "
                     f"/ gold {s.gold})")
    if breakdown:
        for mode in MODES:
            lines.append(f"-- {mode} by overlap pattern")
            for pattern in PATTERNS:
                s = report.per_pattern[mode][pattern]
                lines.append(f"   {pattern:7s} F1 {s.f1:6.4f}  "
                             f"({s.correct}/{s.predicted}/{s.gold})")
            lines.append(f"-- {mode} by triple count")
            for bucket in COUNT_BUCKETS:
                s = report.per_count[mode][bucket]
                lines.append(f"   N={bucket:4s} F1 {s.f1:6.4f}  "
                             f"({s.correct}/{s.predicted}/{s.gold})")
    return "\n".join(lines)
