"""Training loop with early stopping and criterion-based checkpoint selection.

One training run is single-threaded over parameter updates; with a fixed seed
and a fixed torch thread count, history metrics are bitwise reproducible.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from .corpus import CorpusSplit, Instance, Label
from .errors import ConfigurationError, DivergenceError, NotFoundError
from .explainer import (
    ExplainableVteModel,
    ExplanationClassifier,
    Vocab,
    expl_to_label,
    sequence_nll,
)
from .features import FeatureStore, RegionFeatureMatrix
from .metrics import ConfusionMatrix, accuracy, balanced_accuracy, perplexity
from .model import VteClassifier, label_cross_entropy, predicted_label
from .text import format_table, tokenize


class SelectionMetric(enum.Enum):
    BALANCED_ACCURACY = "balanced_accuracy"
    PERPLEXITY = "perplexity"

    @property
    def mode(self) -> str:
        return "min" if self is SelectionMetric.PERPLEXITY else "max"


@dataclass
class TrainingConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.4
    selection_metric: SelectionMetric = SelectionMetric.BALANCED_ACCURACY
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_metric: float
    checkpoint_id: str


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int = 0
    stop_epoch: int = 0

    @property
    def selected_metric(self) -> float:
        return self.records[self.selected_epoch - 1].val_metric

    def to_record(self) -> dict:
        return {
            "epochs": [
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "val_metric": r.val_metric,
                    "checkpoint_id": r.checkpoint_id,
                }
                for r in self.records
            ],
            "selected_epoch": self.selected_epoch,
            "stop_epoch": self.stop_epoch,
        }

    def to_text(self) -> str:
        rows = [
            [
                r.epoch,
                f"{r.train_loss:.6f}",
                f"{r.val_metric:.6f}",
                r.checkpoint_id + (" *" if r.epoch == self.selected_epoch else ""),
            ]
            for r in self.records
        ]
        return format_table(["epoch", "train loss", "val metric", "checkpoint"], rows)


def save_history(history: TrainingHistory, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(history.to_record(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


class EarlyStopper:
    """Strict-improvement early stopping; ties keep the earliest optimum."""

    def __init__(self, patience: int, mode: str):
        if mode not in ("max", "min"):
            raise ValueError(f"unknown mode {mode!r}")
        self.patience = patience
        self.mode = mode
        self.best: Optional[float] = None
        self.best_epoch = 0
        self.streak = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch's metric; True means stop after this epoch."""
        if self.best is None:
            improved = True
        elif self.mode == "max":
            improved = value > self.best
        else:
            improved = value < self.best
        if improved:
            self.best = value
            self.best_epoch = epoch
            self.streak = 0
        else:
            self.streak += 1
        return self.streak >= self.patience


def run_schedule(
    metrics: Sequence[float], patience: int, mode: str = "max"
) -> tuple[int, int]:
    """Apply the stopping/selection rule to a scripted metric sequence;
    returns (stop_epoch, selected_epoch)."""
    stopper = EarlyStopper(patience, mode)
    stop_epoch = len(metrics)
    for epoch, value in enumerate(metrics, start=1):
        if stopper.update(epoch, value):
            stop_epoch = epoch
            break
    return stop_epoch, stopper.best_epoch


FeatureProvider = Mapping[str, RegionFeatureMatrix] | FeatureStore | Callable


def resolve_features(provider: FeatureProvider, image_id: str) -> RegionFeatureMatrix:
    if isinstance(provider, FeatureStore):
        return provider.get(image_id)
    if callable(provider):
        return provider(image_id)
    try:
        return provider[image_id]
    except KeyError as exc:
        raise NotFoundError(f"no features for image {image_id!r}") from exc


class ClassifierTask:
    """Label cross-entropy training for the entailment classifier."""

    def __init__(
        self,
        model: VteClassifier,
        train_split: CorpusSplit,
        val_split: CorpusSplit,
        features: FeatureProvider,
        plain_accuracy: bool = False,
    ):
        self.model = model
        self.train_items = list(train_split)
        self.val_items = list(val_split)
        self.features = features
        self.plain_accuracy = plain_accuracy
        self.metric_mode = "max"

    def batch_loss(self, batch: Sequence[Instance]) -> torch.Tensor:
        losses = []
        for instance in batch:
            logits, _ = self.model.label_logits(
                instance, resolve_features(self.features, instance.image_id)
            )
            losses.append(label_cross_entropy(logits, instance.label))
        return torch.stack(losses).mean()

    def _confusion(self, items: Sequence[Instance]) -> ConfusionMatrix:
        with torch.no_grad():
            return ConfusionMatrix.from_pairs(
                (
                    inst.label,
                    self.model.predict(inst, resolve_features(self.features, inst.image_id)),
                )
                for inst in items
            )

    def validation_metric(self) -> float:
        cm = self._confusion(self.val_items)
        return accuracy(cm) if self.plain_accuracy else balanced_accuracy(cm)

    def split_accuracy(self, items: Sequence[Instance], balanced: bool = False) -> float:
        cm = self._confusion(items)
        return balanced_accuracy(cm) if balanced else accuracy(cm)


class ExplainableTask:
    """Combined label/explanation loss for the explainable models.

    With ``selection=BALANCED_ACCURACY`` this is the predict-and-explain
    regime; with alpha=0 and ``selection=PERPLEXITY`` it is the generator
    half of explain-then-predict.
    """

    def __init__(
        self,
        model: ExplainableVteModel,
        train_split: CorpusSplit,
        val_split: CorpusSplit,
        features: FeatureProvider,
        vocab: Vocab,
        alpha: float,
        selection: SelectionMetric = SelectionMetric.BALANCED_ACCURACY,
        reduction: str = "mean",
    ):
        for split, name in ((train_split, "train"), (val_split, "validation")):
            for inst in split:
                if not inst.explanations:
                    raise ConfigurationError(
                        f"{name} instance {inst.pair_id} has no reference explanation"
                    )
        self.model = model
        self.train_items = list(train_split)
        self.val_split = val_split
        self.val_items = list(val_split)
        self.features = features
        self.vocab = vocab
        self.alpha = alpha
        self.selection = selection
        self.reduction = reduction
        self.metric_mode = selection.mode

    def batch_loss(self, batch: Sequence[Instance]) -> torch.Tensor:
        losses = []
        for instance in batch:
            total, _ = self.model.loss(
                instance,
                resolve_features(self.features, instance.image_id),
                self.vocab,
                self.alpha,
                tokenize(instance.explanations[0]),
                self.reduction,
            )
            losses.append(total)
        return torch.stack(losses).mean()

    def _score_fn(self):
        def score(instance: Instance, reference: str) -> tuple[float, int]:
            features = resolve_features(self.features, instance.image_id)
            with torch.no_grad():
                _, f = self.model.trunk.forward_instance(instance, features)
                label = (
                    instance.label if self.model.decoder.condition_on_label else None
                )
                nll, n_tokens = sequence_nll(
                    self.model.decoder, self.vocab, f, label, tokenize(reference)
                )
            return float(nll), n_tokens

        return score

    def validation_metric(self) -> float:
        if self.selection is SelectionMetric.PERPLEXITY:
            return perplexity(self._score_fn(), self.val_split)
        with torch.no_grad():
            cm = ConfusionMatrix.from_pairs(
                (
                    inst.label,
                    self.model.trunk.predict(
                        inst, resolve_features(self.features, inst.image_id)
                    ),
                )
                for inst in self.val_items
            )
        return balanced_accuracy(cm)


class ExplToLabelTask:
    """Explanation-to-label classifier training over (tokens, label) pairs."""

    def __init__(
        self,
        model: ExplanationClassifier,
        train_pairs: Sequence[tuple[Sequence[str], Label]],
        val_pairs: Sequence[tuple[Sequence[str], Label]],
        vocab: Vocab,
    ):
        self.model = model
        self.train_items = list(train_pairs)
        self.val_items = list(val_pairs)
        self.vocab = vocab
        self.metric_mode = "max"

    def batch_loss(self, batch) -> torch.Tensor:
        losses = []
        for tokens, label in batch:
            logits = self.model.logits(self.vocab.encode(tokens))
            losses.append(label_cross_entropy(logits, label))
        return torch.stack(losses).mean()

    def validation_metric(self) -> float:
        with torch.no_grad():
            cm = ConfusionMatrix.from_pairs(
                (
                    label,
                    predicted_label(
                        expl_to_label(self.model, list(tokens), self.vocab).numpy()
                    ),
                )
                for tokens, label in self.val_items
            )
        return balanced_accuracy(cm)


def explanation_pairs_from_split(
    split: CorpusSplit,
) -> list[tuple[list[str], Label]]:
    """(tokenized explanation, gold label) pairs for explanation classification."""
    pairs = []
    for instance in split:
        for explanation in instance.explanations:
            pairs.append((tokenize(explanation), instance.label))
    return pairs


def _snapshot(model: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(task, config: TrainingConfig) -> tuple[dict[str, torch.Tensor], TrainingHistory]:
    """Mini-batch Adam training with seeded shuffling, per-epoch validation,
    patience-based early stopping, and best-checkpoint selection.

    Returns the state dict of the metric-optimal epoch and the history.
    """
    items = task.train_items
    if not items:
        raise ConfigurationError("training split is empty")
    if not getattr(task, "val_items", None):
        raise ConfigurationError("validation split is empty")

    optimizer = torch.optim.Adam(
        (p for p in task.model.parameters() if p.requires_grad),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
    )
    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopper(config.patience, task.metric_mode)
    history = TrainingHistory()
    best_state = _snapshot(task.model)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(items))
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, len(items), config.batch_size)):
            batch = [items[i] for i in order[start : start + config.batch_size]]
            loss = task.batch_loss(batch)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise DivergenceError(epoch, batch_index)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += value * len(batch)

        val_metric = float(task.validation_metric())
        history.records.append(
            EpochRecord(epoch, epoch_loss / len(items), val_metric, f"epoch-{epoch:03d}")
        )
        should_stop = stopper.update(epoch, val_metric)
        if stopper.best_epoch == epoch:
            best_state = _snapshot(task.model)
        if should_stop:
            break

    history.selected_epoch = stopper.best_epoch
    history.stop_epoch = history.records[-1].epoch
    return best_state, history


@dataclass
class AlphaRunResult:
    state: dict[str, torch.Tensor]
    history: TrainingHistory

    @property
    def metric(self) -> float:
        return self.history.selected_metric


@dataclass
class SweepResult:
    runs: dict[float, AlphaRunResult]
    best_alpha: float

    def to_record(self) -> dict:
        return {
            "best_alpha": self.best_alpha,
            "runs": {
                str(alpha): {
                    "metric": run.metric,
                    "selected_epoch": run.history.selected_epoch,
                }
                for alpha, run in self.runs.items()
            },
        }

    def to_text(self) -> str:
        rows = [
            [
                alpha,
                f"{run.metric:.6f}",
                run.history.selected_epoch,
                "*" if alpha == self.best_alpha else "",
            ]
            for alpha, run in self.runs.items()
        ]
        return format_table(["alpha", "val metric", "selected epoch", "best"], rows)


def alpha_sweep(
    values: Sequence[float],
    make_task: Callable[[float], object],
    config: TrainingConfig,
    train_fn: Callable = train,
) -> SweepResult:
    """Independent seeded training runs per alpha; the winner is the alpha
    whose selected checkpoint maximizes the validation metric."""
    for alpha in values:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if not values:
        raise ValueError("alpha sweep needs at least one value")
    runs: dict[float, AlphaRunResult] = {}
    best_alpha = None
    best_metric = -math.inf
    for alpha in values:
        run_config = replace(config, alpha=alpha)
        state, history = train_fn(make_task(alpha), run_config)
        run = AlphaRunResult(state, history)
        runs[alpha] = run
        if run.metric > best_metric:
            best_metric = run.metric
            best_alpha = alpha
    return SweepResult(runs=runs, best_alpha=best_alpha)
