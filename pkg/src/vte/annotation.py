"""Quality-controlled annotation protocol: batches, validation, aggregation.

Everything here is pure and deterministic given its inputs (batch assembly is
seeded), so the functions can back both offline corpus correction and the
live annotation service.

Annotation record files are JSON lines, one record per line:

    {"pair_id": ..., "worker_id": ..., "label": ..., "highlighted": [i, ...],
     "explanation": ..., "timestamp": "ISO-8601"}
"""

from __future__ import annotations

import enum
import hashlib
import json
import random
import statistics
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .corpus import LABELS, Instance, Label
from .errors import ArityError, ConfigurationError, InsufficientWorkError, IntegrityError
from .text import format_table, normalize_token, tokenize

BATCH_SIZE = 10


@dataclass(frozen=True)
class Submission:
    """A worker's raw (possibly incomplete) answer for one instance."""

    pair_id: str
    worker_id: str
    label: Optional[Label]
    highlighted: tuple[int, ...]
    explanation: str


@dataclass(frozen=True)
class AnnotationRecord:
    """A validated, persisted annotation."""

    pair_id: str
    worker_id: str
    label: Label
    highlighted: frozenset[int]
    explanation: str
    timestamp: datetime

    def __post_init__(self):
        if not self.highlighted:
            raise ValueError(f"record {self.pair_id}: highlighted set must be non-empty")
        if not self.explanation:
            raise ValueError(f"record {self.pair_id}: explanation must be non-empty")


def record_to_line(record: AnnotationRecord) -> str:
    return json.dumps(
        {
            "pair_id": record.pair_id,
            "worker_id": record.worker_id,
            "label": record.label.value,
            "highlighted": sorted(record.highlighted),
            "explanation": record.explanation,
            "timestamp": record.timestamp.isoformat(),
        },
        ensure_ascii=False,
    )


def record_from_line(line: str) -> AnnotationRecord:
    raw = json.loads(line)
    return AnnotationRecord(
        pair_id=raw["pair_id"],
        worker_id=raw["worker_id"],
        label=Label.from_str(raw["label"]),
        highlighted=frozenset(int(i) for i in raw["highlighted"]),
        explanation=raw["explanation"],
        timestamp=datetime.fromisoformat(raw["timestamp"]),
    )


def load_records(path) -> list[AnnotationRecord]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_line(line) for line in fh if line.strip()]


def save_records(records: Iterable[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_to_line(record))
            fh.write("\n")


@dataclass(frozen=True)
class TrustedPair:
    """An instance whose label is known with confidence; used to gate batches."""

    instance: Instance
    gold_label: Label

    def __post_init__(self):
        if self.gold_label is not self.instance.label:
            raise IntegrityError(
                f"trusted pair {self.instance.pair_id}: gold label disagrees with instance"
            )


@dataclass(frozen=True)
class Batch:
    batch_id: str
    items: tuple[Instance, ...]
    trusted_position: int
    seed: int

    def __post_init__(self):
        if len(self.items) != BATCH_SIZE:
            raise IntegrityError(f"batch must contain exactly {BATCH_SIZE} items")
        if not 0 <= self.trusted_position < BATCH_SIZE:
            raise IntegrityError("trusted_position out of range")

    @property
    def work_items(self) -> tuple[Instance, ...]:
        """The 9 non-trusted instances, in batch order."""
        return tuple(
            inst for i, inst in enumerate(self.items) if i != self.trusted_position
        )


def assemble_batch(
    queue: Sequence[Instance], trusted_pool: Sequence[TrustedPair], seed: int
) -> Batch:
    """Build a 10-item batch: the first 9 queue items plus one trusted pair
    inserted at a seeded uniform position."""
    if len(trusted_pool) == 0:
        raise ConfigurationError("trusted pool is empty")
    if len(queue) < BATCH_SIZE - 1:
        raise InsufficientWorkError(
            f"need {BATCH_SIZE - 1} queue items, have {len(queue)}"
        )
    rng = random.Random(seed)
    trusted = rng.choice(list(trusted_pool))
    position = rng.randrange(BATCH_SIZE)
    items = list(queue[: BATCH_SIZE - 1])
    items.insert(position, trusted.instance)
    digest = hashlib.sha1(
        json.dumps([seed] + [inst.pair_id for inst in items]).encode()
    ).hexdigest()[:12]
    return Batch(
        batch_id=f"b{digest}",
        items=tuple(items),
        trusted_position=position,
        seed=seed,
    )


class ValidationFailure(enum.Enum):
    NO_LABEL = "NO_LABEL"
    NO_HIGHLIGHT = "NO_HIGHLIGHT"
    TOO_FEW_HIGHLIGHTED_USED = "TOO_FEW_HIGHLIGHTED_USED"
    HYPOTHESIS_COPY = "HYPOTHESIS_COPY"


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    failures: tuple[ValidationFailure, ...]

    @classmethod
    def from_failures(cls, failures: Sequence[ValidationFailure]) -> "ValidationResult":
        return cls(ok=not failures, failures=tuple(failures))


def validate_submission(instance: Instance, submission: Submission) -> ValidationResult:
    """Apply the in-browser submission rules.

    A submission passes when a label is chosen, at least one word is
    highlighted, at least half of the highlighted words appear (normalized)
    in the explanation, and the explanation is not a copy of the hypothesis.
    """
    if submission.pair_id != instance.pair_id:
        raise IntegrityError(
            f"submission for {submission.pair_id!r} checked against {instance.pair_id!r}"
        )
    for index in submission.highlighted:
        if not 0 <= index < len(instance.hypothesis):
            raise IntegrityError(
                f"highlight index {index} out of range for {instance.pair_id!r}"
            )

    failures = []
    if submission.label is None:
        failures.append(ValidationFailure.NO_LABEL)
    if not submission.highlighted:
        failures.append(ValidationFailure.NO_HIGHLIGHT)
    else:
        explanation_tokens = set(tokenize(submission.explanation))
        used = 0
        for index in set(submission.highlighted):
            norm = normalize_token(instance.hypothesis[index])
            if norm and norm in explanation_tokens:
                used += 1
        # 2*used >= n avoids fractional comparison for "at least half".
        if 2 * used < len(set(submission.highlighted)):
            failures.append(ValidationFailure.TOO_FEW_HIGHLIGHTED_USED)
    if tokenize(submission.explanation) == tokenize(" ".join(instance.hypothesis)):
        failures.append(ValidationFailure.HYPOTHESIS_COPY)
    return ValidationResult.from_failures(failures)


def check_trusted(batch: Batch, submissions: Sequence[Submission]) -> bool:
    """True iff the submission at the trusted position carries the gold label."""
    if len(submissions) != BATCH_SIZE:
        raise IntegrityError(
            f"expected {BATCH_SIZE} submissions, got {len(submissions)}"
        )
    for inst, sub in zip(batch.items, submissions):
        if inst.pair_id != sub.pair_id:
            raise IntegrityError(
                f"submission order mismatch: {sub.pair_id!r} vs {inst.pair_id!r}"
            )
    gold = batch.items[batch.trusted_position].label
    return submissions[batch.trusted_position].label is gold


@dataclass(frozen=True)
class AggregationOutcome:
    """Result of aggregating the three annotations collected for one pair."""

    pair_id: str
    label: Optional[Label]
    agreement: Optional[int]
    majority_explanations: tuple[str, ...] = ()

    @property
    def is_ambiguous(self) -> bool:
        return self.label is None

    @classmethod
    def majority(
        cls, pair_id: str, label: Label, agreement: int, explanations: Sequence[str]
    ) -> "AggregationOutcome":
        return cls(pair_id, label, agreement, tuple(explanations))

    @classmethod
    def ambiguous(cls, pair_id: str) -> "AggregationOutcome":
        return cls(pair_id, None, None, ())


def outcome_to_record(outcome: AggregationOutcome) -> dict:
    return {
        "pair_id": outcome.pair_id,
        "decision": "ambiguous" if outcome.is_ambiguous else "majority",
        "label": None if outcome.label is None else outcome.label.value,
        "agreement": outcome.agreement,
        "majority_explanations": list(outcome.majority_explanations),
    }


def outcome_from_record(record: dict) -> AggregationOutcome:
    if record["decision"] == "ambiguous":
        return AggregationOutcome.ambiguous(record["pair_id"])
    return AggregationOutcome.majority(
        record["pair_id"],
        Label.from_str(record["label"]),
        int(record["agreement"]),
        record.get("majority_explanations", []),
    )


def aggregate(pair_id: str, records: Sequence[AnnotationRecord]) -> AggregationOutcome:
    """Three-way label aggregation: 2-or-3 agreement wins, 3 distinct labels
    is ambiguous. Majority explanations are ordered by worker_id so the
    outcome is invariant under record permutation."""
    if len(records) != 3:
        raise ArityError(f"aggregate needs exactly 3 records, got {len(records)}")
    if any(r.pair_id != pair_id for r in records):
        raise IntegrityError(f"records do not all reference pair {pair_id!r}")
    if len({r.worker_id for r in records}) != 3:
        raise IntegrityError(f"pair {pair_id!r}: duplicate worker among records")

    counts = Counter(r.label for r in records)
    label, top = counts.most_common(1)[0]
    if top < 2:
        return AggregationOutcome.ambiguous(pair_id)
    agreeing = sorted(
        (r for r in records if r.label is label), key=lambda r: r.worker_id
    )
    return AggregationOutcome.majority(
        pair_id, label, top, [r.explanation for r in agreeing]
    )


@dataclass(frozen=True)
class RedistributionReport:
    """How re-annotated pairs redistribute over labels.

    ``majority_fractions`` are taken over majority outcomes only (the
    "remain/become" figures); ``outcome_fractions`` are taken over all
    outcomes and sum with ``ambiguous_fraction`` to exactly 1. Fractions are
    exact rationals; convert with float() for display.
    """

    original_label: Label
    n_outcomes: int
    n_majority: int
    n_ambiguous: int
    majority_fractions: dict[Label, Fraction] = field(default_factory=dict)
    outcome_fractions: dict[Label, Fraction] = field(default_factory=dict)
    ambiguous_fraction: Fraction = Fraction(0)

    @property
    def remaining_fraction(self) -> Fraction:
        return self.majority_fractions[self.original_label]

    def to_record(self) -> dict:
        return {
            "original_label": self.original_label.value,
            "n_outcomes": self.n_outcomes,
            "n_majority": self.n_majority,
            "n_ambiguous": self.n_ambiguous,
            "majority_fractions": {
                l.value: float(f) for l, f in self.majority_fractions.items()
            },
            "outcome_fractions": {
                l.value: float(f) for l, f in self.outcome_fractions.items()
            },
            "ambiguous_fraction": float(self.ambiguous_fraction),
        }

    def to_text(self) -> str:
        rows = []
        for label in LABELS:
            kind = "remain" if label is self.original_label else "become"
            rows.append(
                [
                    f"{kind} {label.value}",
                    f"{float(self.majority_fractions[label]):.4f}",
                    f"{float(self.outcome_fractions[label]):.4f}",
                ]
            )
        rows.append(
            ["ambiguous (removed)", "-", f"{float(self.ambiguous_fraction):.4f}"]
        )
        return format_table(["outcome", "of majorities", "of all outcomes"], rows)


def redistribution_report(
    outcomes: Sequence[AggregationOutcome], original_label: Label
) -> RedistributionReport:
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    n = len(outcomes)
    majority_counts = Counter(o.label for o in outcomes if not o.is_ambiguous)
    n_majority = sum(majority_counts.values())
    n_ambiguous = n - n_majority
    majority_fractions = {
        label: (
            Fraction(majority_counts.get(label, 0), n_majority)
            if n_majority
            else Fraction(0)
        )
        for label in LABELS
    }
    outcome_fractions = {
        label: Fraction(majority_counts.get(label, 0), n) for label in LABELS
    }
    return RedistributionReport(
        original_label=original_label,
        n_outcomes=n,
        n_majority=n_majority,
        n_ambiguous=n_ambiguous,
        majority_fractions=majority_fractions,
        outcome_fractions=outcome_fractions,
        ambiguous_fraction=Fraction(n_ambiguous, n),
    )


def estimate_error_rate(sample: Sequence[tuple[Label, Label]]) -> float:
    """Fraction of (corrected, gold) pairs that disagree."""
    if not sample:
        raise ValueError("sample must be non-empty")
    mismatches = sum(1 for corrected, gold in sample if corrected is not gold)
    return mismatches / len(sample)


@dataclass(frozen=True)
class WorkerReport:
    n_workers: int
    mean_assignments: Optional[float]
    std_assignments: Optional[float]

    def to_record(self) -> dict:
        return {
            "n_workers": self.n_workers,
            "mean_assignments": self.mean_assignments,
            "std_assignments": self.std_assignments,
        }

    def to_text(self) -> str:
        fmt = lambda v: "n/a" if v is None else f"{v:.4f}"
        return format_table(
            ["statistic", "value"],
            [
                ["workers", self.n_workers],
                ["mean assignments", fmt(self.mean_assignments)],
                ["std assignments", fmt(self.std_assignments)],
            ],
        )


def worker_report(records: Sequence[AnnotationRecord]) -> WorkerReport:
    """Distinct workers and population mean/std of per-worker record counts."""
    counts = Counter(r.worker_id for r in records)
    if not counts:
        return WorkerReport(0, None, None)
    values = list(counts.values())
    return WorkerReport(
        n_workers=len(counts),
        mean_assignments=statistics.fmean(values),
        std_assignments=statistics.pstdev(values),
    )
