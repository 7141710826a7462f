"""Evaluation metrics: edit distance, ANLS, exact-match accuracy and the
two-step (per-dataset, then across datasets) average.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import DomainError

# metric kind per source dataset
DATASET_METRICS = {"WTQ": "anls", "DocVQA": "anls", "TabFact": "accuracy"}


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode code points."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalize_answer(text: str) -> str:
    return text.strip().lower()


def anls_score(prediction: str, golds: Iterable[str], tau: float = 0.5) -> float:
    """Best normalized Levenshtein similarity against any gold, zeroed below ``tau``.

    ``tau=0`` gives the raw (unthresholded) similarity.
    """
    golds = list(golds)
    if not golds:
        raise DomainError("at least one gold answer is required")
    pred = normalize_answer(prediction)
    best = 0.0
    for gold in golds:
        gold = normalize_answer(gold)
        longest = max(len(pred), len(gold))
        sim = 1.0 if longest == 0 else 1.0 - levenshtein(pred, gold) / longest
        best = max(best, sim)
    return best if best >= tau else 0.0


def accuracy_score(prediction: str, golds: Iterable[str]) -> float:
    golds = list(golds)
    if not golds:
        raise DomainError("at least one gold answer is required")
    pred = normalize_answer(prediction)
    return 1.0 if any(pred == normalize_answer(g) for g in golds) else 0.0


@dataclass(frozen=True)
class EvalExample:
    dataset: str
    prediction: str
    golds: tuple[str, ...]
    metric: str = ""

    def __post_init__(self):
        if not self.golds:
            raise DomainError("EvalExample needs at least one gold answer")
        if not self.metric:
            object.__setattr__(self, "metric", DATASET_METRICS.get(self.dataset, "anls"))
        expected = DATASET_METRICS.get(self.dataset)
        if expected is not None and self.metric != expected:
            raise DomainError(f"{self.dataset} is scored with {expected}, not {self.metric}")

    def score(self, tau: float = 0.5) -> float:
        if self.metric == "anls":
            return anls_score(self.prediction, self.golds, tau)
        if self.metric == "accuracy":
            return accuracy_score(self.prediction, self.golds)
        raise DomainError(f"unknown metric kind {self.metric!r}")


@dataclass(frozen=True)
class ScoreReport:
    per_dataset: dict[str, float]
    final: float
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def final_x100(self) -> float:
        return 100.0 * self.final

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_dataset": self.per_dataset,
                "counts": self.counts,
                "final": self.final,
                "final_x100": self.final_x100,
            },
            indent=2,
            sort_keys=True,
        )


def two_step_scores(scores: dict[str, Sequence[float]]) -> ScoreReport:
    """Mean per dataset, then unweighted mean across datasets (sorted by name)."""
    if not scores:
        raise DomainError("no examples to average")
    per_dataset = {}
    counts = {}
    for name in sorted(scores):
        values = list(scores[name])
        if not values:
            raise DomainError(f"dataset {name!r} has no examples")
        total = 0.0
        for s in values:
            total += s
        per_dataset[name] = total / len(values)
        counts[name] = len(values)
    final = 0.0
    for name in per_dataset:
        final += per_dataset[name]
    return ScoreReport(per_dataset=per_dataset, final=final / len(per_dataset), counts=counts)


def two_step_average(examples: Sequence[EvalExample], tau: float = 0.5) -> ScoreReport:
    if not examples:
        raise DomainError("no examples to average")
    grouped: dict[str, list[float]] = defaultdict(list)
    for ex in examples:
        grouped[ex.dataset].append(ex.score(tau))
    return two_step_scores(grouped)


def read_predictions(lines: Iterable[str]) -> list[EvalExample]:
    """Parse ``dataset<TAB>prediction<TAB>gold1|gold2|...`` records."""
    examples = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DomainError(f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        dataset, prediction, golds = parts
        examples.append(EvalExample(dataset, prediction, tuple(golds.split("|"))))
    return examples
