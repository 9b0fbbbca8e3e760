"""Synthetic desk-scale corpora.

The label signal is planted redundantly: a label cue token inside the
hypothesis and a label-dependent offset on region 0 of the image features,
so the classifier has both a textual and a visual path to the answer.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusSplit,
    Instance,
    Label,
    LABELS,
    Source,
    SplitName,
    save_split,
)
from .features import FeatureStore, RegionFeatureMatrix

FILLER_TOKENS = [
    "a", "the", "man", "woman", "dog", "park", "red", "blue",
    "ball", "street", "is", "in", "on", "near", "group", "child",
]

CUE_TOKENS = {
    Label.ENTAILMENT: "clearly",
    Label.NEUTRAL: "maybe",
    Label.CONTRADICTION: "never",
}

EXPLANATION_TEMPLATES = {
    Label.ENTAILMENT: "the image clearly shows the {0}",
    Label.NEUTRAL: "maybe the {0} is there but it is not certain",
    Label.CONTRADICTION: "the image never contains the {0}",
}


def synth_vte_corpus(
    seed: int,
    n_instances: int,
    num_regions: int = 3,
    region_dim: int = 8,
    name: SplitName = SplitName.TRAIN,
    signal_scale: float = 3.0,
) -> tuple[CorpusSplit, dict[str, RegionFeatureMatrix]]:
    """A labeled split plus matching region features, deterministic per seed."""
    rng = random.Random(seed)
    feature_rng = np.random.default_rng(seed)
    instances = []
    features: dict[str, RegionFeatureMatrix] = {}
    for i in range(n_instances):
        label = rng.choice(LABELS)
        pair_id = f"pair-{seed:04d}-{i:04d}"
        image_id = f"img-{seed:04d}-{i:04d}.jpg"
        n_fillers = rng.randint(2, 5)
        tokens = [rng.choice(FILLER_TOKENS) for _ in range(n_fillers)]
        tokens.insert(rng.randrange(n_fillers + 1), CUE_TOKENS[label])
        explanation = EXPLANATION_TEMPLATES[label].format(rng.choice(FILLER_TOKENS))

        matrix = feature_rng.standard_normal((num_regions, region_dim), dtype=np.float32)
        matrix[0, label.index % region_dim] += signal_scale
        features[image_id] = RegionFeatureMatrix(image_id, matrix)
        instances.append(
            Instance(
                pair_id=pair_id,
                image_id=image_id,
                hypothesis=tuple(tokens),
                label=label,
                explanations=(explanation,),
                source=Source.ORIGINAL,
            )
        )
    return CorpusSplit(name=name, instances=tuple(instances)), features


TRAIN_NOUNS = ["dog", "man", "woman", "car", "ball", "tree", "child", "bike", "boat", "hat"]
HELDOUT_NOUNS = ["horse", "girl", "boy", "truck", "kite"]
ADJECTIVES = ["red", "blue", "happy", "small", "big", "old"]

LABEL_TEMPLATES = {
    Label.CONTRADICTION: [
        "there is no {noun} in the picture",
        "the {noun} is not {adj}",
        "nobody is with the {noun}",
    ],
    Label.ENTAILMENT: [
        "the picture clearly shows a {noun}",
        "a {adj} {noun} is visible in the image",
        "the {noun} proves the claim",
    ],
    Label.NEUTRAL: [
        "just because there is a {noun} does not mean it is {adj}",
        "the {noun} might be {adj}",
        "it is unclear whether the {noun} is {adj}",
    ],
}


def templated_explanation_corpus(
    seed: int, n_train_per_label: int, n_heldout_per_label: int
) -> tuple[list[tuple[list[str], Label]], list[tuple[list[str], Label]]]:
    """(tokens, label) pairs whose label is recoverable from template cue
    words; held-out pairs use nouns unseen in training."""
    rng = random.Random(seed)

    def make(nouns, count):
        pairs = []
        for label in LABELS:
            for _ in range(count):
                template = rng.choice(LABEL_TEMPLATES[label])
                text = template.format(noun=rng.choice(nouns), adj=rng.choice(ADJECTIVES))
                pairs.append((text.split(), label))
        rng.shuffle(pairs)
        return pairs

    return make(TRAIN_NOUNS, n_train_per_label), make(HELDOUT_NOUNS, n_heldout_per_label)


def write_demo_workspace(root: str | Path, seed: int = 0, n_train: int = 50) -> Path:
    """Materialize a small end-to-end workspace: splits, features, a worker
    registry, and an annotation queue for the service."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    splits = {}
    all_features: dict[str, RegionFeatureMatrix] = {}
    for offset, (name, count) in enumerate(
        [(SplitName.TRAIN, n_train), (SplitName.VALIDATION, 40), (SplitName.TEST, 18)]
    ):
        split, features = synth_vte_corpus(seed + offset, count, name=name)
        splits[name] = split
        all_features.update(features)
        save_split(split, root / f"{name.value}.jsonl")

    store = FeatureStore(root / "features")
    for matrix in all_features.values():
        store.add(matrix)

    with (root / "workers.jsonl").open("w", encoding="utf-8") as fh:
        for i in range(12):
            fh.write(
                json.dumps(
                    {"worker_id": f"w{i:02d}", "approval_rate": 0.95 if i else 0.85}
                )
                + "\n"
            )

    # queue: neutral validation pairs; trusted pool: confident non-queue pairs
    queue = [i for i in splits[SplitName.VALIDATION] if i.label is Label.NEUTRAL]
    trusted = [i for i in splits[SplitName.TEST].instances[:5]]
    save_split(
        CorpusSplit(SplitName.VALIDATION, tuple(queue)), root / "queue.jsonl"
    )
    save_split(CorpusSplit(SplitName.TEST, tuple(trusted)), root / "trusted.jsonl")
    return root
