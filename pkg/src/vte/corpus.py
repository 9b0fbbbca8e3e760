"""Corpus data model: instances, splits, correction merging, and statistics.

Record files are JSON lines, one instance per line, UTF-8:

    {"pair_id": ..., "image_id": ..., "hypothesis": [tokens...],
     "label": "entailment"|"neutral"|"contradiction",
     "explanations": [...], "source": "original"|"corrected"}

Hypotheses are stored in tokenized form so that serialization round-trips
exactly; ``make_instance`` adapts raw sentence text into token form.
"""

from __future__ import annotations

import enum
import json
import logging
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import CorpusFormatError, IntegrityError
from .text import format_table, tokenize

if TYPE_CHECKING:
    from .annotation import AggregationOutcome

logger = logging.getLogger(__name__)


class Label(enum.Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"

    @classmethod
    def from_str(cls, value: str) -> "Label":
        for label in cls:
            if label.value == value:
                return label
        raise ValueError(f"unknown label {value!r}")

    @property
    def index(self) -> int:
        return _LABEL_ORDER.index(self)


# Index order is the declared tie-break order for predictions.
_LABEL_ORDER = (Label.ENTAILMENT, Label.NEUTRAL, Label.CONTRADICTION)
LABELS = _LABEL_ORDER


class Source(enum.Enum):
    ORIGINAL = "original"
    CORRECTED = "corrected"


class SplitName(enum.Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class Instance:
    """One premise-image/hypothesis pair with its label and reference explanations."""

    pair_id: str
    image_id: str
    hypothesis: tuple[str, ...]
    label: Label
    explanations: tuple[str, ...] = ()
    source: Source = Source.ORIGINAL

    def __post_init__(self):
        if not self.pair_id:
            raise ValueError("pair_id must be non-empty")
        if not self.hypothesis:
            raise ValueError(f"instance {self.pair_id}: hypothesis must be non-empty")
        if self.source is Source.CORRECTED and not self.explanations:
            raise ValueError(
                f"instance {self.pair_id}: corrected instances carry >=1 explanation"
            )


def make_instance(
    pair_id: str,
    image_id: str,
    hypothesis_text: str,
    label: Label,
    explanations: Sequence[str] = (),
    source: Source = Source.ORIGINAL,
) -> Instance:
    """Adapter from raw sentence text to the tokenized record form."""
    return Instance(
        pair_id=pair_id,
        image_id=image_id,
        hypothesis=tuple(tokenize(hypothesis_text)),
        label=label,
        explanations=tuple(explanations),
        source=source,
    )


@dataclass(frozen=True)
class CorpusSplit:
    name: SplitName
    instances: tuple[Instance, ...]

    def __post_init__(self):
        seen = set()
        for inst in self.instances:
            if inst.pair_id in seen:
                raise IntegrityError(f"duplicate pair_id {inst.pair_id!r} in split")
            seen.add(inst.pair_id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def by_pair_id(self) -> dict[str, Instance]:
        return {inst.pair_id: inst for inst in self.instances}


@dataclass(frozen=True)
class SplitStats:
    n_images: int
    per_label_counts: Mapping[Label, int]
    n_explanations_original: int
    n_explanations_collected: int
    vocabulary_size: int

    def to_record(self) -> dict:
        return {
            "n_images": self.n_images,
            "per_label_counts": {l.value: c for l, c in self.per_label_counts.items()},
            "n_explanations_original": self.n_explanations_original,
            "n_explanations_collected": self.n_explanations_collected,
            "vocabulary_size": self.vocabulary_size,
        }

    def to_text(self) -> str:
        rows = [["images", self.n_images]]
        rows += [[f"label {l.value}", self.per_label_counts[l]] for l in LABELS]
        rows += [
            ["explanations (original)", self.n_explanations_original],
            ["explanations (collected)", self.n_explanations_collected],
            ["vocabulary size", self.vocabulary_size],
        ]
        return format_table(["statistic", "count"], rows)


def instance_to_record(instance: Instance) -> dict:
    return {
        "pair_id": instance.pair_id,
        "image_id": instance.image_id,
        "hypothesis": list(instance.hypothesis),
        "label": instance.label.value,
        "explanations": list(instance.explanations),
        "source": instance.source.value,
    }


def instance_from_record(record: dict) -> Instance:
    if not isinstance(record, dict):
        raise ValueError("record must be a JSON object")
    try:
        pair_id = record["pair_id"]
        image_id = record["image_id"]
        hypothesis = record["hypothesis"]
        label = Label.from_str(record["label"])
        explanations = record.get("explanations", [])
        source = Source(record.get("source", "original"))
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]!r}") from exc
    if not isinstance(hypothesis, list) or not all(isinstance(t, str) for t in hypothesis):
        raise ValueError("hypothesis must be a list of token strings")
    if not isinstance(explanations, list) or not all(isinstance(e, str) for e in explanations):
        raise ValueError("explanations must be a list of strings")
    return Instance(
        pair_id=str(pair_id),
        image_id=str(image_id),
        hypothesis=tuple(hypothesis),
        label=label,
        explanations=tuple(explanations),
        source=source,
    )


def load_split(path: str | Path, name: SplitName) -> CorpusSplit:
    """Load a JSON-lines record file, preserving file order.

    Raises CorpusFormatError naming the offending line on parse failures and
    IntegrityError on duplicate pair_ids.
    """
    path = Path(path)
    instances = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                instance = instance_from_record(record)
            except (json.JSONDecodeError, ValueError) as exc:
                raise CorpusFormatError(path, line_no, str(exc)) from exc
            if instance.pair_id in seen:
                raise IntegrityError(
                    f"{path}:{line_no}: duplicate pair_id {instance.pair_id!r}"
                )
            seen.add(instance.pair_id)
            instances.append(instance)
    return CorpusSplit(name=name, instances=tuple(instances))


def save_split(split: CorpusSplit, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for inst in split.instances:
            fh.write(json.dumps(instance_to_record(inst), ensure_ascii=False))
            fh.write("\n")


def merge_corrections(
    base: CorpusSplit, outcomes: Iterable["AggregationOutcome"]
) -> CorpusSplit:
    """Apply re-annotation outcomes to a split.

    Majority outcomes relabel the instance, mark it corrected, and replace its
    explanations with the majority workers' explanations; ambiguous outcomes
    drop the instance. Only originally neutral, uncorrected instances may be
    targeted, so re-applying the same outcomes raises IntegrityError.
    """
    by_id = base.by_pair_id()
    corrections: dict[str, "AggregationOutcome"] = {}
    for outcome in outcomes:
        target = by_id.get(outcome.pair_id)
        if target is None:
            raise IntegrityError(f"outcome references unknown pair_id {outcome.pair_id!r}")
        if target.label is not Label.NEUTRAL or target.source is not Source.ORIGINAL:
            raise IntegrityError(
                f"outcome targets {outcome.pair_id!r} which is not an original neutral pair"
            )
        if outcome.pair_id in corrections:
            raise IntegrityError(f"duplicate outcome for pair_id {outcome.pair_id!r}")
        corrections[outcome.pair_id] = outcome

    merged = []
    for inst in base.instances:
        outcome = corrections.get(inst.pair_id)
        if outcome is None:
            merged.append(inst)
        elif outcome.is_ambiguous:
            continue
        else:
            merged.append(
                replace(
                    inst,
                    label=outcome.label,
                    explanations=tuple(outcome.majority_explanations),
                    source=Source.CORRECTED,
                )
            )
    return CorpusSplit(name=base.name, instances=tuple(merged))


def attach_explanations(
    split: CorpusSplit, source: Mapping[str, Sequence[str]]
) -> CorpusSplit:
    """Attach reference explanations to original instances.

    Corrected instances are skipped (they already carry collected
    explanations). Map keys absent from the split are reported at warning
    level, not treated as failures. Validation/test instances keep at most 3
    references.
    """
    by_id = split.by_pair_id()
    for pair_id in source:
        if pair_id not in by_id:
            logger.warning("attach_explanations: pair_id %r not in split", pair_id)
    cap = 3 if split.name in (SplitName.VALIDATION, SplitName.TEST) else None
    out = []
    for inst in split.instances:
        mapped = source.get(inst.pair_id)
        if mapped is None or inst.source is Source.CORRECTED:
            out.append(inst)
            continue
        explanations = tuple(inst.explanations) + tuple(mapped)
        if cap is not None:
            explanations = explanations[:cap]
        out.append(replace(inst, explanations=explanations))
    return CorpusSplit(name=split.name, instances=tuple(out))


def compute_stats(split: CorpusSplit) -> SplitStats:
    """Counts over a split; vocabulary covers hypothesis and explanation tokens."""
    images = set()
    label_counts = Counter()
    n_original = 0
    n_collected = 0
    vocabulary: set[str] = set()
    for inst in split.instances:
        images.add(inst.image_id)
        label_counts[inst.label] += 1
        if inst.source is Source.ORIGINAL:
            n_original += len(inst.explanations)
        else:
            n_collected += len(inst.explanations)
        vocabulary.update(tokenize(" ".join(inst.hypothesis)))
        for explanation in inst.explanations:
            vocabulary.update(tokenize(explanation))
    return SplitStats(
        n_images=len(images),
        per_label_counts={label: label_counts.get(label, 0) for label in LABELS},
        n_explanations_original=n_original,
        n_explanations_collected=n_collected,
        vocabulary_size=len(vocabulary),
    )
