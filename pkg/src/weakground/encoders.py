"""Trainable feature extractors and the class transform matrix."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

GEOMETRY_DIM = 27


class ProposalEncoder(nn.Module):
    """Attribute encoder: linear projection of per-proposal attributes, optionally
    summed with a projected initial object feature, then self-attention across
    proposals.

    No positional encoding is used, so the encoder is permutation-equivariant
    over proposals.
    """

    def __init__(self, attr_dim: int, hidden_dim: int, init_feature_dim: int = 0,
                 num_layers: int = 2, num_heads: int = 4, coord_scale: float = 1.0):
        super().__init__()
        self.attr_dim = attr_dim
        self.coord_scale = coord_scale
        self.attr_proj = nn.Linear(attr_dim, hidden_dim)
        self.init_proj = nn.Linear(init_feature_dim, hidden_dim) if init_feature_dim else None
        self.layers = nn.ModuleList([
            nn.TransformerEncoderLayer(hidden_dim, num_heads, 2 * hidden_dim, dropout=0.0,
                                       batch_first=True)
            for _ in range(num_layers)])

    def project(self, attributes: torch.Tensor,
                init_features: Optional[torch.Tensor] = None) -> torch.Tensor:
        if attributes.shape[-1] != self.attr_dim:
            raise ValueError(f"expected {self.attr_dim} attribute dims, got {attributes.shape[-1]}")
        geo, rest = attributes[..., :GEOMETRY_DIM], attributes[..., GEOMETRY_DIM:]
        x = self.attr_proj(torch.cat([geo * self.coord_scale, rest], dim=-1))
        if self.init_proj is not None:
            if init_features is None:
                raise ValueError("this encoder expects initial object features")
            x = x + self.init_proj(init_features)
        return x

    def forward(self, attributes: torch.Tensor,
                init_features: Optional[torch.Tensor] = None) -> torch.Tensor:
        squeeze = attributes.dim() == 2
        if squeeze:
            attributes = attributes.unsqueeze(0)
            init_features = init_features.unsqueeze(0) if init_features is not None else None
        x = self.project(attributes, init_features)
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0) if squeeze else x


def encode_proposals(attributes: torch.Tensor, encoder: ProposalEncoder,
                     init_features: Optional[torch.Tensor] = None) -> torch.Tensor:
    return encoder(attributes, init_features)


class SentenceEncoder(nn.Module):
    """Word embeddings fed through a GRU cell one token at a time."""

    def __init__(self, vocab_size: int, embed_dim: int, hidden_dim: int,
                 pretrained: Optional[np.ndarray] = None, trainable: bool = True,
                 pooling: str = "last"):
        super().__init__()
        if pooling not in ("last", "mean"):
            raise ValueError("pooling must be 'last' or 'mean'")
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        if pretrained is not None:
            if pretrained.shape != (vocab_size, embed_dim):
                raise ValueError("pretrained table has the wrong shape")
            with torch.no_grad():
                self.embedding.weight.copy_(torch.as_tensor(pretrained))
        self.embedding.weight.requires_grad_(trainable)
        self.cell = nn.GRUCell(embed_dim, hidden_dim)
        self.hidden_dim = hidden_dim
        self.pooling = pooling

    def forward(self, tokens: torch.Tensor, lengths: Optional[torch.Tensor] = None):
        """Return ``(pooled (S, d), states (S, L, d))`` for padded ``tokens (S, L)``.

        Steps past a sentence's length carry the previous state unchanged.
        """
        if tokens.dim() == 1:
            pooled, states = self.forward(tokens.unsqueeze(0),
                                          None if lengths is None else lengths.reshape(1))
            return pooled[0], states[0]
        n, length = tokens.shape
        if length == 0:
            raise ValueError("empty sentence")
        if lengths is None:
            lengths = torch.full((n,), length, dtype=torch.long)
        if int(lengths.min()) < 1:
            raise ValueError("empty sentence")
        if int(tokens.max()) >= self.embedding.num_embeddings or int(tokens.min()) < 0:
            raise ValueError("token id outside vocabulary")
        emb = self.embedding(tokens)
        h = emb.new_zeros(n, self.hidden_dim)
        states = []
        for t in range(length):
            h_new = self.cell(emb[:, t], h)
            alive = (t < lengths).unsqueeze(-1)
            h = torch.where(alive, h_new, h)
            states.append(h)
        states = torch.stack(states, dim=1)
        if self.pooling == "last":
            pooled = states[torch.arange(n), lengths - 1]
        else:
            valid = (torch.arange(length)[None] < lengths[:, None]).unsqueeze(-1)
            pooled = (states * valid).sum(1) / lengths[:, None].to(states.dtype)
        return pooled, states


def encode_sentence(tokens: torch.Tensor, encoder: SentenceEncoder,
                    lengths: Optional[torch.Tensor] = None):
    return encoder(tokens, lengths)


class TextClassifier(nn.Module):
    def __init__(self, hidden_dim: int, num_text_classes: int):
        super().__init__()
        self.fc = nn.Linear(hidden_dim, num_text_classes)

    def forward(self, sentence_feature: torch.Tensor) -> torch.Tensor:
        return self.fc(sentence_feature)


def classify_text(sentence_feature: torch.Tensor, classifier: TextClassifier) -> torch.Tensor:
    return classifier(sentence_feature)


def text_cls_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean cross-entropy of text-class logits against labels."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = labels.reshape(-1)
    if int(labels.min()) < 0 or int(labels.max()) >= logits.shape[-1]:
        raise ValueError("text class label out of range")
    return F.cross_entropy(logits, labels)


@dataclass
class ClassTransform:
    matrix: np.ndarray          # (N_o, N_t), cosine similarities
    object_names: list[str]
    text_names: list[str]

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.matrix, dtype=dtype)


def build_class_transform(object_names: Sequence[str], text_names: Sequence[str],
                          name_embeddings: Mapping[str, np.ndarray]) -> ClassTransform:
    def unit(name: str) -> np.ndarray:
        if name not in name_embeddings:
            raise KeyError(f"no embedding for class name {name!r}")
        v = np.asarray(name_embeddings[name], dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise ValueError(f"zero-norm embedding for class name {name!r}")
        return v / norm

    obj = np.stack([unit(n) for n in object_names])
    txt = np.stack([unit(n) for n in text_names])
    matrix = np.clip(obj @ txt.T, -1.0, 1.0)
    # identical names are exactly aligned regardless of rounding
    for i, o in enumerate(object_names):
        for j, t in enumerate(text_names):
            if o == t:
                matrix[i, j] = 1.0
    return ClassTransform(matrix, list(object_names), list(text_names))
