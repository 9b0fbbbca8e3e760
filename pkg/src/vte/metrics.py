"""Evaluation metrics and reporting: balanced accuracy, perplexity, the
selection/test evaluation matrix, and the human relevance-audit harness."""

from __future__ import annotations

import csv
import logging
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .corpus import LABELS, CorpusSplit, Instance, Label
from .errors import ConfigurationError, DataError, UndefinedClassError
from .explainer import GeneratedExplanation
from .text import format_table

logger = logging.getLogger(__name__)


class ConfusionMatrix:
    """3x3 counts, rows gold, columns predicted."""

    def __init__(self, counts=None):
        if counts is None:
            counts = np.zeros((3, 3), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (3, 3):
            raise ValueError("confusion matrix must be 3x3")
        if np.any(self.counts < 0):
            raise ValueError("confusion matrix counts must be non-negative")

    @classmethod
    def from_pairs(cls, pairs) -> "ConfusionMatrix":
        cm = cls()
        for gold, predicted in pairs:
            cm.add(gold, predicted)
        return cm

    def add(self, gold: Label, predicted: Label) -> None:
        self.counts[gold.index, predicted.index] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_text(self) -> str:
        headers = ["gold \\ predicted"] + [l.value for l in LABELS]
        rows = [
            [gold.value] + [int(self.counts[gold.index, p.index]) for p in LABELS]
            for gold in LABELS
        ]
        return format_table(headers, rows)


def accuracy(cm: ConfusionMatrix) -> float:
    """Plain accuracy: diagonal mass over total."""
    if cm.total == 0:
        raise UndefinedClassError("accuracy undefined on an empty matrix")
    return float(np.trace(cm.counts)) / cm.total


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean over classes of per-class accuracy (diagonal / gold-row total)."""
    row_totals = cm.counts.sum(axis=1)
    for label in LABELS:
        if row_totals[label.index] == 0:
            raise UndefinedClassError(f"no gold instances of class {label.value}")
    per_class = np.diag(cm.counts) / row_totals
    return float(per_class.mean())


def perplexity(
    score_fn: Callable[[Instance, str], tuple[float, int]],
    split: CorpusSplit,
) -> float:
    """exp(mean per-token negative log-likelihood) over all tokens of all
    reference explanations of all instances.

    ``score_fn(instance, reference)`` returns (summed NLL, token count) for
    one teacher-forced reference; tokenization is the score function's
    concern.
    """
    total_nll = 0.0
    total_tokens = 0
    for instance in split:
        if not instance.explanations:
            raise DataError(f"instance {instance.pair_id} has no reference explanations")
        for reference in instance.explanations:
            nll, n_tokens = score_fn(instance, reference)
            total_nll += float(nll)
            total_tokens += int(n_tokens)
    if total_tokens == 0:
        raise DataError("no reference tokens to score")
    return math.exp(total_nll / total_tokens)


ORIGINAL, CORRECTED = "original", "corrected"


@dataclass(frozen=True)
class EvaluationMatrixReport:
    """Accuracy table over (selection split) x (test split).

    Plain accuracy on the original test split, balanced accuracy on the
    corrected one; the (corrected-selection, original-test) cell is N/A.
    """

    cells: dict[tuple[str, str], Optional[float]]

    def to_record(self) -> dict:
        return {
            f"test-{test}/val-{sel}": self.cells[(sel, test)]
            for sel in (ORIGINAL, CORRECTED)
            for test in (ORIGINAL, CORRECTED)
        }

    def to_text(self) -> str:
        def fmt(value):
            return "N/A" if value is None else f"{value:.4f}"

        rows = [
            [f"test-{test}"] + [fmt(self.cells[(sel, test)]) for sel in (ORIGINAL, CORRECTED)]
            for test in (ORIGINAL, CORRECTED)
        ]
        return format_table(["", "val-original", "val-corrected"], rows)


def evaluate_matrix(
    predictors: Mapping[str, Callable[[Instance], Label]],
    test_splits: Mapping[str, CorpusSplit],
) -> EvaluationMatrixReport:
    """Run the three selection/test combinations.

    ``predictors`` maps selection-split name ("original"/"corrected") to a
    label predictor backed by the checkpoint selected on that split.
    """
    for key in (ORIGINAL, CORRECTED):
        if key not in predictors:
            raise ConfigurationError(f"missing checkpoint/predictor for {key!r} selection")
        if key not in test_splits:
            raise ConfigurationError(f"missing test split {key!r}")

    def score(selection: str, test: str) -> float:
        predictor = predictors[selection]
        cm = ConfusionMatrix.from_pairs(
            (inst.label, predictor(inst)) for inst in test_splits[test]
        )
        return accuracy(cm) if test == ORIGINAL else balanced_accuracy(cm)

    cells: dict[tuple[str, str], Optional[float]] = {
        (ORIGINAL, ORIGINAL): score(ORIGINAL, ORIGINAL),
        (CORRECTED, ORIGINAL): None,
        (ORIGINAL, CORRECTED): score(ORIGINAL, CORRECTED),
        (CORRECTED, CORRECTED): score(CORRECTED, CORRECTED),
    }
    return EvaluationMatrixReport(cells)


@dataclass(frozen=True)
class RelevanceScore:
    """k of n required attributes present in an explanation."""

    k: int
    n: int

    def __post_init__(self):
        if not 0 <= self.k <= self.n or self.n < 1:
            raise ValueError(f"invalid relevance score {self.k}/{self.n}")

    @property
    def score(self) -> float:
        return self.k / self.n


SHEET_COLUMNS = [
    "pair_id",
    "image_id",
    "hypothesis",
    "gold_label",
    "explanation",
    "k",
    "n",
]


def make_relevance_sheet(
    generated: Sequence[GeneratedExplanation],
    gold_split: CorpusSplit,
    sample_size: int,
    seed: int,
) -> list[dict]:
    """Sample correctly-predicted instances for human scoring.

    Rows carry empty k/n fields for the scorer. If fewer correct predictions
    exist than requested, all of them are returned with a warning.
    """
    by_id = gold_split.by_pair_id()
    correct = [
        g
        for g in generated
        if g.pair_id in by_id and by_id[g.pair_id].label is g.predicted_label
    ]
    if len(correct) < sample_size:
        logger.warning(
            "relevance audit: only %d correct predictions available (%d requested)",
            len(correct),
            sample_size,
        )
        sampled = list(correct)
    else:
        sampled = random.Random(seed).sample(correct, sample_size)
    rows = []
    for item in sampled:
        instance = by_id[item.pair_id]
        rows.append(
            {
                "pair_id": item.pair_id,
                "image_id": instance.image_id,
                "hypothesis": " ".join(instance.hypothesis),
                "gold_label": instance.label.value,
                "explanation": item.explanation,
                "k": "",
                "n": "",
            }
        )
    return rows


def write_relevance_sheet(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SHEET_COLUMNS, dialect="excel-tab")
        writer.writeheader()
        writer.writerows(rows)


def read_relevance_sheet(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, dialect="excel-tab"))


@dataclass(frozen=True)
class RelevanceAggregate:
    n_scored: int
    mean_score: Optional[float]
    fully_relevant_fraction: Optional[float]

    def to_record(self) -> dict:
        return {
            "n_scored": self.n_scored,
            "mean_score": self.mean_score,
            "fully_relevant_fraction": self.fully_relevant_fraction,
        }


def score_relevance_sheet(rows: Sequence[dict]) -> RelevanceAggregate:
    """Aggregate a human-filled sheet: mean k/n and fraction with k == n."""
    scores = []
    for row in rows:
        k, n = str(row.get("k", "")).strip(), str(row.get("n", "")).strip()
        if not k and not n:
            continue
        scores.append(RelevanceScore(int(k), int(n)))
    if not scores:
        return RelevanceAggregate(0, None, None)
    return RelevanceAggregate(
        n_scored=len(scores),
        mean_score=sum(s.score for s in scores) / len(scores),
        fully_relevant_fraction=sum(1 for s in scores if s.k == s.n) / len(scores),
    )
