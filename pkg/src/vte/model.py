"""Image-text entailment classifier.

Pipeline: GRU hypothesis encoding, top-down attention over region features,
gated-product multimodal fusion, and a tanh MLP over three labels. The
attention and fusion layers compute exactly

    s_i = w2^T tanh(W1 [v_i; h])        (region scores, softmax-normalized)
    f   = tanh(W_v c) * tanh(W_h h)     (element-wise product fusion)

and therefore carry no bias terms; the classifier MLP keeps zero-initialized
biases. All weight matrices are initialized uniform(-a, a) with
a = sqrt(6 / (fan_in + fan_out)) from a seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import LABELS, Instance, Label
from .errors import IntegrityError, ShapeError
from .features import EmbeddingTable, RegionFeatureMatrix

N_LABELS = 3


def init_parameters(module: nn.Module, seed: int) -> None:
    """Seeded init: uniform(-a, a), a = sqrt(6/(fan_in+fan_out)) per weight
    matrix; vectors (biases) zero."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for _, param in module.named_parameters():
            if param.dim() >= 2:
                fan_out, fan_in = param.shape[0], math.prod(param.shape[1:])
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                param.uniform_(-bound, bound, generator=gen)
            else:
                param.zero_()


def predicted_label(probabilities: Sequence[float]) -> Label:
    """Argmax with ties broken toward the lowest label index."""
    return LABELS[int(np.argmax(np.asarray(probabilities)))]


class TopDownAttention(nn.Module):
    def __init__(self, region_dim: int, hidden_dim: int, attention_dim: int):
        super().__init__()
        self.region_dim = region_dim
        self.hidden_dim = hidden_dim
        self.score_hidden = nn.Linear(region_dim + hidden_dim, attention_dim, bias=False)
        self.score_out = nn.Linear(attention_dim, 1, bias=False)

    def forward(self, regions: torch.Tensor, h: torch.Tensor):
        if regions.dim() != 2 or regions.shape[1] != self.region_dim:
            raise ShapeError(
                f"regions must be K x {self.region_dim}, got {tuple(regions.shape)}"
            )
        if h.shape != (self.hidden_dim,):
            raise ShapeError(f"hypothesis vector must have dim {self.hidden_dim}")
        k = regions.shape[0]
        joint = torch.cat([regions, h.unsqueeze(0).expand(k, -1)], dim=1)
        scores = self.score_out(torch.tanh(self.score_hidden(joint))).squeeze(1)
        weights = torch.softmax(scores, dim=0)
        context = weights @ regions
        return weights, context


class MultimodalFusion(nn.Module):
    def __init__(self, region_dim: int, hidden_dim: int):
        super().__init__()
        self.region_dim = region_dim
        self.hidden_dim = hidden_dim
        self.project_context = nn.Linear(region_dim, hidden_dim, bias=False)
        self.project_hypothesis = nn.Linear(hidden_dim, hidden_dim, bias=False)

    def forward(self, context: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if context.shape != (self.region_dim,):
            raise ShapeError(f"context must have dim {self.region_dim}")
        if h.shape != (self.hidden_dim,):
            raise ShapeError(f"hypothesis vector must have dim {self.hidden_dim}")
        return torch.tanh(self.project_context(context)) * torch.tanh(
            self.project_hypothesis(h)
        )


class LabelClassifier(nn.Module):
    def __init__(self, hidden_dim: int):
        super().__init__()
        self.hidden = nn.Linear(hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, N_LABELS)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.out(torch.tanh(self.hidden(f)))


@dataclass
class VteModelConfig:
    embed_dim: int
    hidden_dim: int = 512
    region_dim: int = 2048
    attention_dim: int | None = None
    trainable_embeddings: bool = False
    seed: int = 0
    tokens: list[str] = field(default_factory=list)

    def resolved_attention_dim(self) -> int:
        return self.attention_dim if self.attention_dim is not None else self.hidden_dim

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "region_dim": self.region_dim,
            "attention_dim": self.attention_dim,
            "trainable_embeddings": self.trainable_embeddings,
            "seed": self.seed,
            "tokens": list(self.tokens),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "VteModelConfig":
        return cls(**raw)


class VteClassifier(nn.Module):
    """End-to-end classifier over (region features, hypothesis tokens)."""

    CHECKPOINT_KIND = "vte_classifier"

    def __init__(
        self,
        config: VteModelConfig,
        embeddings: EmbeddingTable | None = None,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        if embeddings is not None:
            config.tokens = embeddings.tokens()
            if embeddings.dim != config.embed_dim:
                raise ShapeError(
                    f"embedding table dim {embeddings.dim} != config {config.embed_dim}"
                )
        self.config = config
        self.token_index = {t: i for i, t in enumerate(config.tokens)}
        self.unk_index = len(config.tokens)

        self.embedding = nn.Embedding(len(config.tokens) + 1, config.embed_dim)
        self.encoder = nn.GRU(config.embed_dim, config.hidden_dim, batch_first=True)
        self.attention = TopDownAttention(
            config.region_dim, config.hidden_dim, config.resolved_attention_dim()
        )
        self.fusion = MultimodalFusion(config.region_dim, config.hidden_dim)
        self.classifier = LabelClassifier(config.hidden_dim)

        self.to(dtype)
        init_parameters(self, config.seed)
        if embeddings is not None:
            with torch.no_grad():
                rows = [embeddings.vectors[t] for t in config.tokens]
                rows.append(embeddings.unknown)
                self.embedding.weight.copy_(
                    torch.tensor(np.stack(rows), dtype=dtype)
                )
        self.embedding.weight.requires_grad_(config.trainable_embeddings)

    @property
    def dtype(self) -> torch.dtype:
        return self.embedding.weight.dtype

    @classmethod
    def from_config(cls, raw: dict, dtype: torch.dtype = torch.float64) -> "VteClassifier":
        return cls(VteModelConfig.from_dict(raw), embeddings=None, dtype=dtype)

    def embed(self, tokens: Sequence[str]) -> torch.Tensor:
        if not tokens:
            raise ValueError("token sequence must be non-empty")
        ids = [self.token_index.get(t, self.unk_index) for t in tokens]
        return self.embedding(torch.tensor(ids, dtype=torch.long))

    def encode(self, embedded: torch.Tensor) -> torch.Tensor:
        """Final-step GRU output for a (T, E) embedded sequence."""
        if embedded.dim() != 2 or embedded.shape[0] < 1:
            raise ValueError("embedded sequence must be (T, E) with T >= 1")
        if embedded.shape[1] != self.config.embed_dim:
            raise ShapeError(f"embedding dim must be {self.config.embed_dim}")
        output, _ = self.encoder(embedded.unsqueeze(0))
        return output[0, -1]

    def attend(self, regions: torch.Tensor, h: torch.Tensor):
        return self.attention(regions, h)

    def fuse(self, context: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return self.fusion(context, h)

    def classify(self, f: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.classifier(f), dim=0)

    def regions_tensor(self, features: RegionFeatureMatrix) -> torch.Tensor:
        return torch.tensor(features.features, dtype=self.dtype)

    def fused_representation(
        self, instance: Instance, features: RegionFeatureMatrix
    ) -> torch.Tensor:
        if features.image_id != instance.image_id:
            raise IntegrityError(
                f"features for {features.image_id!r} paired with instance "
                f"image {instance.image_id!r}"
            )
        h = self.encode(self.embed(instance.hypothesis))
        _, context = self.attend(self.regions_tensor(features), h)
        return self.fuse(context, h)

    def label_logits(self, instance: Instance, features: RegionFeatureMatrix):
        f = self.fused_representation(instance, features)
        return self.classifier(f), f

    def forward_instance(self, instance: Instance, features: RegionFeatureMatrix):
        """Full composition; returns (label probabilities, fused vector)."""
        logits, f = self.label_logits(instance, features)
        return torch.softmax(logits, dim=0), f

    def predict(self, instance: Instance, features: RegionFeatureMatrix) -> Label:
        probs, _ = self.forward_instance(instance, features)
        return predicted_label(probs.detach().numpy())


def label_cross_entropy(logits: torch.Tensor, label: Label) -> torch.Tensor:
    return nn.functional.cross_entropy(
        logits.unsqueeze(0), torch.tensor([label.index], dtype=torch.long)
    )
