import math
import random

import pytest
import torch
from torch import nn

from vte.corpus import Label, SplitName
from vte.errors import ConfigurationError, DivergenceError
from vte.explainer import build_vocab
from vte.model import VteClassifier, VteModelConfig
from vte.features import random_embedding_table
from vte.synth import synth_vte_corpus, templated_explanation_corpus
from vte.training import (
    AlphaRunResult,
    ClassifierTask,
    EarlyStopper,
    EpochRecord,
    ExplToLabelTask,
    SelectionMetric,
    TrainingConfig,
    TrainingHistory,
    alpha_sweep,
    explanation_pairs_from_split,
    run_schedule,
    save_history,
    train,
)


class StubTask:
    """Scripted validation metrics over a trivial differentiable loss."""

    def __init__(self, metrics, mode="max", nan_loss=False):
        self.model = nn.Linear(1, 1, dtype=torch.float64)
        self.train_items = list(range(4))
        self.val_items = [0]
        self.metric_mode = mode
        self.snapshots = []
        self._metrics = list(metrics)
        self._nan_loss = nan_loss
        self._epoch = 0

    def batch_loss(self, batch):
        x = torch.ones(len(batch), 1, dtype=torch.float64)
        loss = self.model(x).pow(2).mean()
        if self._nan_loss:
            loss = loss * float("nan")
        return loss

    def validation_metric(self):
        value = self._metrics[self._epoch]
        self._epoch += 1
        self.snapshots.append(
            {k: v.detach().clone() for k, v in self.model.state_dict().items()}
        )
        return value


class TestEarlyStoppingRule:
    def test_scripted_patience_three(self):
        stop, selected = run_schedule([0.50, 0.60, 0.59, 0.58, 0.57], patience=3)
        assert (stop, selected) == (5, 2)

    def test_strictly_increasing_runs_to_the_end(self):
        metrics = [i / 100 for i in range(1, 101)]
        stop, selected = run_schedule(metrics, patience=3)
        assert (stop, selected) == (100, 100)

    def test_tie_goes_to_earliest(self):
        stop, selected = run_schedule([0.5, 0.7, 0.7, 0.7, 0.7], patience=3)
        assert (stop, selected) == (5, 2)

    def test_perplexity_mode_minimizes(self):
        stop, selected = run_schedule([5.0, 4.0, 4.5, 4.4, 4.3], patience=3, mode="min")
        assert (stop, selected) == (5, 2)

    def test_matches_brute_force_on_random_sequences(self, rng_seed):
        rng = random.Random(rng_seed)

        def oracle(metrics, patience):
            best = -math.inf
            streak = 0
            best_epoch = 0
            for epoch, value in enumerate(metrics, start=1):
                if value > best:
                    best, best_epoch, streak = value, epoch, 0
                else:
                    streak += 1
                if streak >= patience:
                    return epoch, best_epoch
            return len(metrics), best_epoch

        for _ in range(500):
            metrics = [rng.choice([0.1, 0.2, 0.3, 0.4]) for _ in range(rng.randint(1, 15))]
            patience = rng.randint(1, 4)
            assert run_schedule(metrics, patience) == oracle(metrics, patience)

    def test_stopper_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            EarlyStopper(3, "sideways")


class TestTrainingConfig:
    def test_defaults_match_protocol(self):
        config = TrainingConfig()
        assert config.batch_size == 64
        assert config.max_epochs == 100
        assert config.patience == 3
        assert (config.beta1, config.beta2, config.eps) == (0.9, 0.999, 1e-8)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainingConfig(patience=0)
        with pytest.raises(ValueError):
            TrainingConfig(alpha=1.5)


class TestTrainLoop:
    def config(self, **kw):
        defaults = dict(batch_size=2, max_epochs=10, patience=3, seed=0)
        defaults.update(kw)
        return TrainingConfig(**defaults)

    def test_scripted_metrics_drive_stop_and_selection(self):
        task = StubTask([0.50, 0.60, 0.59, 0.58, 0.57])
        _, history = train(task, self.config())
        assert history.stop_epoch == 5
        assert history.selected_epoch == 2
        assert [r.epoch for r in history.records] == [1, 2, 3, 4, 5]
        assert [r.val_metric for r in history.records] == [0.50, 0.60, 0.59, 0.58, 0.57]

    def test_returns_snapshot_of_selected_epoch(self):
        task = StubTask([0.9, 0.5, 0.4, 0.3])
        state, history = train(task, self.config())
        assert history.selected_epoch == 1
        for key, value in state.items():
            torch.testing.assert_close(value, task.snapshots[0][key], rtol=0, atol=0)

    def test_stops_at_max_epochs(self):
        task = StubTask([i / 10 for i in range(1, 11)])
        _, history = train(task, self.config(max_epochs=4))
        assert history.stop_epoch == 4
        assert history.selected_epoch == 4

    def test_non_finite_loss_raises_divergence_error(self):
        task = StubTask([0.5], nan_loss=True)
        with pytest.raises(DivergenceError) as excinfo:
            train(task, self.config())
        assert excinfo.value.epoch == 1
        assert excinfo.value.batch_index == 0

    def test_empty_split_rejected(self):
        task = StubTask([0.5])
        task.train_items = []
        with pytest.raises(ConfigurationError):
            train(task, self.config())

    def test_history_selected_is_metric_optimum(self):
        task = StubTask([0.3, 0.8, 0.6, 0.8, 0.2])
        _, history = train(task, self.config())
        values = [r.val_metric for r in history.records]
        assert history.selected_epoch == values.index(max(values)) + 1


def classifier_task(seed=0, n=12, hidden=8):
    split, features = synth_vte_corpus(seed, n)
    tokens = sorted({t for inst in split for t in inst.hypothesis})
    table = random_embedding_table(tokens, dim=8, seed=seed)
    model = VteClassifier(
        VteModelConfig(embed_dim=8, hidden_dim=hidden, region_dim=8, seed=seed),
        embeddings=table,
    )
    return ClassifierTask(model, split, split, features)


class TestRealTraining:
    def test_fixed_seed_bitwise_reproducible(self):
        histories = []
        for _ in range(2):
            task = classifier_task(seed=5)
            _, history = train(
                task, TrainingConfig(batch_size=4, max_epochs=3, patience=3, seed=7)
            )
            histories.append(history)
        a, b = histories
        assert [r.train_loss for r in a.records] == [r.train_loss for r in b.records]
        assert [r.val_metric for r in a.records] == [r.val_metric for r in b.records]

    def test_small_corpus_accuracy_climbs(self):
        task = classifier_task(seed=3, n=20, hidden=16)
        config = TrainingConfig(
            batch_size=8, max_epochs=60, patience=60, learning_rate=3e-3, seed=0
        )
        state, history = train(task, config)
        task.model.load_state_dict(state)
        assert task.split_accuracy(task.train_items) >= 0.9


class TestExplToLabelTraining:
    def test_templated_corpus_trains(self):
        train_pairs, heldout = templated_explanation_corpus(0, 8, 4)
        vocab = build_vocab((tokens for tokens, _ in train_pairs), min_count=1)
        from vte.explainer import ExplanationClassifier, ExplToLabelConfig

        model = ExplanationClassifier(
            ExplToLabelConfig(vocab_size=len(vocab), embed_dim=8, hidden_dim=12, mlp_dim=12, seed=0)
        )
        task = ExplToLabelTask(model, train_pairs, heldout, vocab)
        _, history = train(
            task, TrainingConfig(batch_size=8, max_epochs=5, patience=5, seed=0)
        )
        assert len(history.records) == 5
        values = [r.val_metric for r in history.records]
        assert history.selected_epoch == values.index(max(values)) + 1


class TestAlphaSweep:
    @staticmethod
    def stub_train(task, config):
        metric = 1.0 - abs(config.alpha - 0.4)
        history = TrainingHistory(
            records=[EpochRecord(1, 0.0, metric, "epoch-001")],
            selected_epoch=1,
            stop_epoch=1,
        )
        return {}, history

    def test_stubbed_winner_is_point_four(self):
        result = alpha_sweep(
            [0.2, 0.4, 0.6, 0.8], lambda a: None, TrainingConfig(), train_fn=self.stub_train
        )
        assert result.best_alpha == 0.4
        assert set(result.runs) == {0.2, 0.4, 0.6, 0.8}

    def test_single_value_wins_trivially(self):
        result = alpha_sweep(
            [0.5], lambda a: None, TrainingConfig(), train_fn=self.stub_train
        )
        assert result.best_alpha == 0.5

    def test_invalid_alpha_rejected(self):
        with pytest.raises(ValueError):
            alpha_sweep([0.2, 1.4], lambda a: None, TrainingConfig(), train_fn=self.stub_train)
        with pytest.raises(ValueError):
            alpha_sweep([], lambda a: None, TrainingConfig(), train_fn=self.stub_train)


class TestHistoryArtifacts:
    def test_save_history(self, tmp_path):
        history = TrainingHistory(
            records=[EpochRecord(1, 0.5, 0.7, "epoch-001")], selected_epoch=1, stop_epoch=1
        )
        path = tmp_path / "history.json"
        save_history(history, path)
        import json

        raw = json.loads(path.read_text())
        assert raw["selected_epoch"] == 1
        assert raw["epochs"][0]["val_metric"] == 0.7
        assert "epoch" in history.to_text()

    def test_explanation_pairs_from_split(self):
        split, _ = synth_vte_corpus(1, 5)
        pairs = explanation_pairs_from_split(split)
        assert len(pairs) == 5
        assert all(isinstance(label, Label) and tokens for tokens, label in pairs)
