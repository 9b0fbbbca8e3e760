"""Explanation generation and explanation-based classification.

Covers the decoder vocabulary with UNK thresholding, the label-conditioned
LSTM decoder (predict-and-explain), the unconditioned generator
(explain-then-predict, trained with alpha=0), beam-search decoding, the
weighted label/explanation loss, and the explanation-to-label classifier.

Generated-explanation files are JSON lines:

    {"pair_id": ..., "predicted_label": ..., "explanation": "..."}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .corpus import Instance, Label
from .errors import ConfigurationError, FormatError, ShapeError
from .features import RegionFeatureMatrix
from .model import (
    VteClassifier,
    VteModelConfig,
    init_parameters,
    label_cross_entropy,
    predicted_label,
)

PAD_TOKEN = "<pad>"
START_TOKEN = "<s>"
END_TOKEN = "</s>"
UNK_TOKEN = "#UNK#"
LABEL_TOKENS = {
    Label.ENTAILMENT: "<entailment>",
    Label.NEUTRAL: "<neutral>",
    Label.CONTRADICTION: "<contradiction>",
}
DEFAULT_MIN_COUNT = 15


class Vocab:
    """Dense token-id map with reserved special tokens.

    ``include_label_tokens=False`` is for unconditioned decoders at test
    scale, where a minimal vocabulary is needed; vocabularies built from a
    corpus always carry all specials.
    """

    def __init__(
        self,
        tokens: Sequence[str] = (),
        min_count: int = 1,
        include_label_tokens: bool = True,
    ):
        self.min_count = min_count
        self.include_label_tokens = include_label_tokens
        self._specials = [PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN]
        if include_label_tokens:
            self._specials += [LABEL_TOKENS[l] for l in LABEL_TOKENS]
        self._id_of: dict[str, int] = {}
        for token in self._specials:
            self._id_of[token] = len(self._id_of)
        for token in tokens:
            if token in self._id_of:
                raise ValueError(f"token {token!r} duplicates a special or prior token")
            self._id_of[token] = len(self._id_of)
        self._token_of = {i: t for t, i in self._id_of.items()}

    def __len__(self) -> int:
        return len(self._id_of)

    def __contains__(self, token: str) -> bool:
        return token in self._id_of

    @property
    def pad_id(self) -> int:
        return self._id_of[PAD_TOKEN]

    @property
    def start_id(self) -> int:
        return self._id_of[START_TOKEN]

    @property
    def end_id(self) -> int:
        return self._id_of[END_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._id_of[UNK_TOKEN]

    def label_token_id(self, label: Label) -> int:
        token = LABEL_TOKENS[label]
        if token not in self._id_of:
            raise ConfigurationError("vocabulary built without label tokens")
        return self._id_of[token]

    def id_of(self, token: str) -> int:
        return self._id_of.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        return self._token_of[token_id]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._token_of[i] for i in ids]

    def tokens_in_id_order(self) -> list[str]:
        return [self._token_of[i] for i in range(len(self))]


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    """One token per line in id order, headed by the specials and min_count."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"# specials: {' '.join(vocab._specials)}\n")
        fh.write(f"# min_count: {vocab.min_count}\n")
        for token in vocab.tokens_in_id_order():
            fh.write(token + "\n")


def load_vocab(path: str | Path) -> Vocab:
    specials: list[str] | None = None
    min_count = 1
    tokens: list[str] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# specials:"):
                specials = line.split(":", 1)[1].split()
            elif line.startswith("# min_count:"):
                min_count = int(line.split(":", 1)[1])
            elif line:
                tokens.append(line)
    if specials is None:
        raise FormatError(f"{path}: missing specials header")
    include_labels = len(specials) > 4
    vocab = Vocab(
        tokens[len(specials):], min_count=min_count, include_label_tokens=include_labels
    )
    if vocab.tokens_in_id_order() != tokens:
        raise FormatError(f"{path}: token order does not match the special layout")
    return vocab


def build_vocab(
    explanations: Iterable[Sequence[str]], min_count: int = DEFAULT_MIN_COUNT
) -> Vocab:
    """Frequency-thresholded vocabulary over training explanations. Tokens
    below min_count map to UNK at encode time; specials are exempt."""
    counts: dict[str, int] = {}
    for sequence in explanations:
        for token in sequence:
            counts[token] = counts.get(token, 0) + 1
    specials = {PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN, *LABEL_TOKENS.values()}
    kept = [
        t
        for t, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if c >= min_count and t not in specials
    ]
    return Vocab(kept, min_count=min_count, include_label_tokens=True)


@dataclass
class DecoderConfig:
    vocab_size: int
    input_dim: int
    embed_dim: int
    hidden_dim: int = 512
    condition_on_label: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "condition_on_label": self.condition_on_label,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DecoderConfig":
        return cls(**raw)


class ExplanationDecoder(nn.Module):
    """LSTM decoder whose initial hidden and cell states are two learned
    projections of the fused representation."""

    def __init__(self, config: DecoderConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.embed_dim)
        self.init_hidden = nn.Linear(config.input_dim, config.hidden_dim, bias=False)
        self.init_cell = nn.Linear(config.input_dim, config.hidden_dim, bias=False)
        self.lstm = nn.LSTM(config.embed_dim, config.hidden_dim, batch_first=True)
        self.out = nn.Linear(config.hidden_dim, config.vocab_size)
        self.to(dtype)
        init_parameters(self, config.seed)

    @property
    def condition_on_label(self) -> bool:
        return self.config.condition_on_label

    def initial_state(self, f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f.shape != (self.config.input_dim,):
            raise ShapeError(f"fused vector must have dim {self.config.input_dim}")
        h0 = self.init_hidden(f).view(1, 1, -1)
        c0 = self.init_cell(f).view(1, 1, -1)
        return h0, c0

    def _prefix_ids(self, vocab: Vocab, label: Optional[Label]) -> list[int]:
        ids = [vocab.start_id]
        if self.condition_on_label:
            ids.append(vocab.label_token_id(label))
        return ids

    def sequence_logits(
        self, f: torch.Tensor, input_ids: Sequence[int]
    ) -> torch.Tensor:
        """Teacher-forced per-position next-token logits for an input id row."""
        emb = self.embedding(torch.tensor([list(input_ids)], dtype=torch.long))
        state = self.initial_state(f)
        output, _ = self.lstm(emb, state)
        return self.out(output[0])

    def advance_prefix(
        self, f: torch.Tensor, vocab: Vocab, label: Optional[Label]
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        """Consume START (and the label token when conditioning); return the
        log-probabilities of the first generated token and the LSTM state."""
        prefix = self._prefix_ids(vocab, label)
        emb = self.embedding(torch.tensor([prefix], dtype=torch.long))
        output, state = self.lstm(emb, self.initial_state(f))
        logprobs = torch.log_softmax(self.out(output[0, -1]), dim=0)
        return logprobs, state

    def step(
        self, token_ids: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor]
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        """Advance a batch of beams one token; returns (B, V) log-probs."""
        emb = self.embedding(token_ids).unsqueeze(1)
        output, new_state = self.lstm(emb, state)
        logprobs = torch.log_softmax(self.out(output[:, 0, :]), dim=1)
        return logprobs, new_state


def _check_conditioning(decoder: ExplanationDecoder, label: Optional[Label]) -> None:
    if decoder.condition_on_label and label is None:
        raise ConfigurationError("label required: decoder conditions on the label")
    if not decoder.condition_on_label and label is not None:
        raise ConfigurationError("label supplied to an unconditioned decoder")


def sequence_nll(
    decoder: ExplanationDecoder,
    vocab: Vocab,
    f: torch.Tensor,
    label: Optional[Label],
    target: Sequence[str],
) -> tuple[torch.Tensor, int]:
    """Summed teacher-forced cross-entropy over target ++ END, and the number
    of scored tokens. The conditioning label token is never scored."""
    _check_conditioning(decoder, label)
    if not target:
        raise ValueError("target explanation must be non-empty")
    target_ids = vocab.encode(target)
    input_ids = decoder._prefix_ids(vocab, label) + target_ids
    scored_targets = target_ids + [vocab.end_id]
    logits = decoder.sequence_logits(f, input_ids)[-len(scored_targets):]
    nll = nn.functional.cross_entropy(
        logits, torch.tensor(scored_targets, dtype=torch.long), reduction="sum"
    )
    return nll, len(scored_targets)


def decode_loss(
    decoder: ExplanationDecoder,
    vocab: Vocab,
    f: torch.Tensor,
    label: Optional[Label],
    target: Sequence[str],
    reduction: str = "mean",
) -> torch.Tensor:
    """Explanation loss for one reference; token-mean by default."""
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    nll, n_tokens = sequence_nll(decoder, vocab, f, label, target)
    return nll / n_tokens if reduction == "mean" else nll


def combined_loss(l_label, l_expl, alpha: float):
    """total = alpha * l_label + (1 - alpha) * l_expl, alpha in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    def value(loss):
        return float(loss.detach()) if isinstance(loss, torch.Tensor) else float(loss)
    if value(l_label) < 0 or value(l_expl) < 0:
        raise ValueError("component losses must be non-negative")
    return alpha * l_label + (1.0 - alpha) * l_expl


@dataclass(frozen=True)
class LossBreakdown:
    l_label: float
    l_expl: float
    alpha: float
    total: float


def beam_search(
    decoder: ExplanationDecoder,
    vocab: Vocab,
    f: torch.Tensor,
    label: Optional[Label] = None,
    width: int = 3,
    max_len: int = 40,
) -> tuple[int, ...]:
    """Highest-scoring completed hypothesis as a token-id tuple.

    Score is the running sum of token log-probabilities, including END for
    beams that terminate with it; beams still alive at max_len are truncated
    and keep their running score. At each step the top ``width`` candidates
    overall survive; END candidates are held aside as completed while the
    rest expand. Ties break toward the lexicographically smaller id
    sequence. Conditioning tokens are excluded from the result.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    _check_conditioning(decoder, label)
    end_id = vocab.end_id

    with torch.no_grad():
        logprobs, states = decoder.advance_prefix(f, vocab, label)
        # live beams align positionally with state columns and logprob rows
        live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        logprob_rows = logprobs.unsqueeze(0).numpy()
        completed: list[tuple[float, tuple[int, ...]]] = []

        for _ in range(max_len):
            candidates = []
            for beam_idx, (ids, score) in enumerate(live):
                row = logprob_rows[beam_idx]
                for token_id in range(len(vocab)):
                    candidates.append(
                        (score + float(row[token_id]), ids + (token_id,), beam_idx)
                    )
            candidates.sort(key=lambda c: (-c[0], c[1]))
            next_live = []
            origins = []
            for cand_score, cand_ids, beam_idx in candidates[:width]:
                if cand_ids[-1] == end_id:
                    completed.append((cand_score, cand_ids[:-1]))
                else:
                    next_live.append((cand_ids, cand_score))
                    origins.append(beam_idx)
            if not next_live:
                live = []
                break
            tokens = torch.tensor([ids[-1] for ids, _ in next_live], dtype=torch.long)
            origin = torch.tensor(origins, dtype=torch.long)
            state = (
                states[0].index_select(1, origin),
                states[1].index_select(1, origin),
            )
            logprobs, states = decoder.step(tokens, state)
            logprob_rows = logprobs.numpy()
            live = next_live

        for ids, score in live:
            completed.append((score, ids))

    best_score, best_ids = min(completed, key=lambda c: (-c[0], c[1]))
    return best_ids


@dataclass
class ExplToLabelConfig:
    vocab_size: int
    embed_dim: int
    hidden_dim: int = 512
    mlp_dim: int = 512
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "mlp_dim": self.mlp_dim,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ExplToLabelConfig":
        return cls(**raw)


class ExplanationClassifier(nn.Module):
    """Predicts a label from an explanation alone: LSTM over tokens, then a
    three-layer rectified MLP and softmax."""

    CHECKPOINT_KIND = "expl_to_label"

    def __init__(self, config: ExplToLabelConfig, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.embed_dim)
        self.lstm = nn.LSTM(config.embed_dim, config.hidden_dim, batch_first=True)
        self.mlp = nn.Sequential(
            nn.Linear(config.hidden_dim, config.mlp_dim),
            nn.ReLU(),
            nn.Linear(config.mlp_dim, config.mlp_dim),
            nn.ReLU(),
            nn.Linear(config.mlp_dim, config.mlp_dim),
            nn.ReLU(),
        )
        self.out = nn.Linear(config.mlp_dim, 3)
        self.to(dtype)
        init_parameters(self, config.seed)

    @classmethod
    def from_config(cls, raw: dict, dtype: torch.dtype = torch.float64):
        return cls(ExplToLabelConfig.from_dict(raw), dtype=dtype)

    def logits(self, token_ids: Sequence[int]) -> torch.Tensor:
        if not token_ids:
            raise ValueError("explanation must be non-empty")
        emb = self.embedding(torch.tensor([list(token_ids)], dtype=torch.long))
        output, _ = self.lstm(emb)
        return self.out(self.mlp(output[0, -1]))

    def predict(self, tokens: Sequence[str], vocab: Vocab) -> Label:
        probs = expl_to_label(self, tokens, vocab)
        return predicted_label(probs.detach().numpy())


def expl_to_label(
    model: ExplanationClassifier, explanation: Sequence[str], vocab: Vocab
) -> torch.Tensor:
    """Probability vector over labels for one explanation."""
    if not explanation:
        raise ValueError("explanation must be non-empty")
    return torch.softmax(model.logits(vocab.encode(explanation)), dim=0)


class ExplainableVteModel(nn.Module):
    """Classifier trunk plus explanation decoder.

    With a conditioned decoder this is the predict-and-explain system (gold
    label token at train time, predicted label token at test time); with an
    unconditioned decoder and alpha=0 training it is the generator half of
    explain-then-predict.
    """

    CHECKPOINT_KIND = "explainable_vte"

    def __init__(self, trunk: VteClassifier, decoder: ExplanationDecoder):
        super().__init__()
        if decoder.config.input_dim != trunk.config.hidden_dim:
            raise ShapeError("decoder input_dim must equal trunk hidden_dim")
        self.trunk = trunk
        self.decoder = decoder

    @classmethod
    def from_config(cls, raw: dict, dtype: torch.dtype = torch.float64):
        trunk = VteClassifier(VteModelConfig.from_dict(raw["trunk"]), dtype=dtype)
        decoder = ExplanationDecoder(DecoderConfig.from_dict(raw["decoder"]), dtype=dtype)
        return cls(trunk, decoder)

    def config_dict(self) -> dict:
        return {
            "trunk": self.trunk.config.to_dict(),
            "decoder": self.decoder.config.to_dict(),
        }

    def loss(
        self,
        instance: Instance,
        features: RegionFeatureMatrix,
        vocab: Vocab,
        alpha: float,
        reference: Sequence[str],
        reduction: str = "mean",
    ) -> tuple[torch.Tensor, LossBreakdown]:
        logits, f = self.trunk.label_logits(instance, features)
        l_label = label_cross_entropy(logits, instance.label)
        label = instance.label if self.decoder.condition_on_label else None
        l_expl = decode_loss(self.decoder, vocab, f, label, reference, reduction)
        total = combined_loss(l_label, l_expl, alpha)
        return total, LossBreakdown(
            float(l_label.detach()), float(l_expl.detach()), alpha, float(total.detach())
        )

    def generate(
        self,
        instance: Instance,
        features: RegionFeatureMatrix,
        vocab: Vocab,
        width: int = 3,
        max_len: int = 40,
    ) -> tuple[Label, list[str]]:
        """Predict a label, then beam-decode an explanation from f."""
        with torch.no_grad():
            probs, f = self.trunk.forward_instance(instance, features)
        label = predicted_label(probs.detach().numpy())
        condition = label if self.decoder.condition_on_label else None
        ids = beam_search(self.decoder, vocab, f, condition, width=width, max_len=max_len)
        return label, vocab.decode(ids)


@dataclass(frozen=True)
class GeneratedExplanation:
    pair_id: str
    predicted_label: Label
    explanation: str


def save_generated(items: Iterable[GeneratedExplanation], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(
                json.dumps(
                    {
                        "pair_id": item.pair_id,
                        "predicted_label": item.predicted_label.value,
                        "explanation": item.explanation,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_generated(path: str | Path) -> list[GeneratedExplanation]:
    items = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                raw = json.loads(line)
                items.append(
                    GeneratedExplanation(
                        pair_id=raw["pair_id"],
                        predicted_label=Label.from_str(raw["predicted_label"]),
                        explanation=raw["explanation"],
                    )
                )
    return items
