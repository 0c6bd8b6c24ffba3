"""The grounding model: coarse-to-fine teacher plus distilled matching student."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .coarse import object_sentence_similarity, phi, select_top_k
from .config import TrainConfig
from .distill import MatchingHead
from .embeddings import load_vectors, synthetic_vectors
from .encoders import (ProposalEncoder, SentenceEncoder, TextClassifier, build_class_transform)
from .fine import ReconstructionDecoder, autoregressive_loss, reconstruction_loss
from .synth import SceneRecord, mask_sentence
from .vocab import Vocabulary


@dataclass
class Batch:
    attributes: torch.Tensor     # (B, M, A)
    class_probs: torch.Tensor    # (B, M, N_o)
    tokens: torch.Tensor         # (S, L)
    lengths: torch.Tensor        # (S,)
    pad_mask: torch.Tensor       # (S, L) True at padding
    query_scene: torch.Tensor    # (S,)
    text_class: torch.Tensor     # (S,)
    keyword_mask: torch.Tensor   # (S, L)
    sentences: list              # SentenceRecord per query


def scene_tensors(rec: SceneRecord, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    attrs = torch.as_tensor(rec.proposals.attributes, dtype=dtype)
    probs = torch.softmax(torch.as_tensor(rec.proposals.class_logits, dtype=torch.float64), -1).to(dtype)
    return attrs, probs


def make_batch(records: Sequence[SceneRecord], sentence_lists: Sequence[Sequence[int]],
               pad_id: int = 0, dtype=torch.float32, cache: Optional[dict] = None) -> Batch:
    """Stack scenes and the chosen sentence indices of each scene into a batch."""
    attrs, probs = [], []
    for rec in records:
        key = rec.scene.scene_id
        if cache is not None and key in cache:
            a, p = cache[key]
        else:
            a, p = scene_tensors(rec, dtype)
            if cache is not None:
                cache[key] = (a, p)
        attrs.append(a)
        probs.append(p)
    sents, scene_idx = [], []
    for b, (rec, chosen) in enumerate(zip(records, sentence_lists)):
        for i in chosen:
            sents.append(rec.sentences[i])
            scene_idx.append(b)
    length = max(len(s.tokens) for s in sents)
    tokens = torch.full((len(sents), length), pad_id, dtype=torch.long)
    kw = torch.zeros((len(sents), length), dtype=torch.bool)
    for i, s in enumerate(sents):
        tokens[i, :len(s.tokens)] = torch.as_tensor(s.tokens)
        kw[i, s.keyword_positions] = True
    lengths = torch.as_tensor([len(s.tokens) for s in sents])
    pad_mask = torch.arange(length)[None] >= lengths[:, None]
    return Batch(torch.stack(attrs), torch.stack(probs), tokens, lengths, pad_mask,
                 torch.as_tensor(scene_idx), torch.as_tensor([s.text_class_id for s in sents]),
                 kw, sents)


def mask_batch(batch: Batch, ratio: float, rng: np.random.Generator, mask_id: int = 1):
    """Masked copy of the batch tokens and the boolean masked-position matrix."""
    tokens = batch.tokens.clone()
    masked = torch.zeros_like(batch.keyword_mask)
    for i, s in enumerate(batch.sentences):
        ms = mask_sentence(s, ratio, rng, mask_id)
        tokens[i, ms.mask_positions] = mask_id
        masked[i, ms.mask_positions] = True
    return tokens, masked


def word_vectors_for(cfg: TrainConfig, words: Sequence[str]) -> dict[str, np.ndarray]:
    if cfg.embedding_file:
        vectors = load_vectors(cfg.embedding_file)
        missing = [w for w in words if w not in vectors]
        if missing:
            # unseen words (special tokens, etc.) fall back to seeded vectors
            dim = len(next(iter(vectors.values())))
            vectors.update(synthetic_vectors(missing, dim, cfg.embedding_seed))
        return vectors
    return synthetic_vectors(words, cfg.embed_dim, cfg.embedding_seed)


class GroundingModel(nn.Module):
    def __init__(self, cfg: TrainConfig, vocab: Vocabulary, object_classes: Sequence[str],
                 text_classes: Sequence[str], attr_dim: int):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.object_classes = list(object_classes)
        self.text_classes = list(text_classes)
        self.attr_dim = attr_dim
        d, n_o = cfg.hidden_dim, len(object_classes)
        vectors = word_vectors_for(cfg, list(vocab.words) + self.object_classes + self.text_classes)
        table = np.stack([vectors[w] for w in vocab.words])
        if table.shape[1] != cfg.embed_dim:
            raise ValueError("embedding file dimension differs from embed_dim")

        def proposal_encoder():
            return ProposalEncoder(attr_dim, d, n_o, cfg.encoder_layers, cfg.num_heads, cfg.coord_scale)

        def sentence_encoder():
            return SentenceEncoder(len(vocab), cfg.embed_dim, d, table, pooling=cfg.sentence_pooling)

        # teacher path: coarse matcher and reconstruction
        self.proposal_encoder = proposal_encoder()
        self.sentence_encoder = sentence_encoder()
        self.text_classifier = TextClassifier(d, len(text_classes))
        self.decoder = ReconstructionDecoder(d, len(vocab), cfg.decoder_layers, cfg.num_heads)
        transform = build_class_transform(self.object_classes, self.text_classes, vectors)
        self.register_buffer("class_transform", torch.as_tensor(transform.matrix, dtype=torch.float32))
        # student path: the matching architecture trained by distillation only
        self.student_proposal_encoder = proposal_encoder()
        self.student_sentence_encoder = sentence_encoder()
        self.matching_head = MatchingHead(d, cfg.num_heads)

    @property
    def feature_scale(self) -> float:
        if self.cfg.feature_scale is not None:
            return self.cfg.feature_scale
        return self.cfg.hidden_dim ** -0.5

    def teacher_modules(self) -> list[nn.Module]:
        return [self.proposal_encoder, self.sentence_encoder, self.text_classifier, self.decoder]

    def student_modules(self) -> list[nn.Module]:
        return [self.student_proposal_encoder, self.student_sentence_encoder, self.matching_head]

    # ---------------------------------------------------------------- teacher
    def encode(self, batch: Batch):
        proposals = self.proposal_encoder(batch.attributes, batch.class_probs)
        pooled, states = self.sentence_encoder(batch.tokens, batch.lengths)
        return proposals, pooled, states

    def similarity(self, batch: Batch, proposals, pooled, text_logits):
        q = batch.query_scene
        return object_sentence_similarity(
            proposals[q], batch.class_probs[q], pooled, torch.softmax(text_logits, -1),
            self.class_transform, self.cfg.similarity, self.feature_scale,
            use_class=self.cfg.use_cls, use_feature=self.cfg.use_match)

    def candidate_losses(self, batch: Batch, proposals, cand_idx, masked_tokens, masked):
        """Per-candidate reconstruction losses ``(S, K)``."""
        _, masked_states = self.sentence_encoder(masked_tokens, batch.lengths)
        q_props = proposals[batch.query_scene]
        cands = torch.gather(q_props, 1, cand_idx.unsqueeze(-1).expand(-1, -1, q_props.shape[-1]))
        s, k = cand_idx.shape
        length = masked_states.shape[1]
        states = masked_states.unsqueeze(1).expand(s, k, length, -1)
        pad = batch.pad_mask.unsqueeze(1).expand(s, k, length)
        _, energies = self.decoder(states, cands, pad)
        if self.cfg.autoregressive_recon:
            return autoregressive_loss(energies, batch.tokens.unsqueeze(1), ~pad)
        return reconstruction_loss(energies, batch.tokens.unsqueeze(1), masked.unsqueeze(1))

    # ---------------------------------------------------------------- student
    def student_scores(self, batch: Batch) -> torch.Tensor:
        props = self.student_proposal_encoder(batch.attributes, batch.class_probs)[batch.query_scene]
        _, states = self.student_sentence_encoder(batch.tokens, batch.lengths)
        return self.matching_head(props, states, batch.pad_mask)

    def mil_scores(self, batch: Batch) -> torch.Tensor:
        proposals, pooled, _ = self.encode(batch)
        return phi(proposals[batch.query_scene], pooled, "dot", self.feature_scale)

    @torch.no_grad()
    def inference_scores(self, batch: Batch) -> torch.Tensor:
        """Per-proposal scores ``(S, M)`` used at inference for this model's method."""
        return self.student_scores(batch) if self.cfg.method == "full" else self.mil_scores(batch)

    @torch.no_grad()
    def rank(self, batch: Batch) -> torch.Tensor:
        return torch.sort(self.inference_scores(batch), dim=-1, descending=True, stable=True).indices

    @torch.no_grad()
    def teacher_rank(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Coarse-to-fine ranking without the student.

        Candidates are ordered by their reconstruction loss summed over single
        keyword masks; the remaining proposals follow by coarse similarity.
        Returns ``(ranking (S, M), candidate_losses (S, K))``.
        """
        proposals, pooled, _ = self.encode(batch)
        sim = self.similarity(batch, proposals, pooled, self.text_classifier(pooled))
        cand = select_top_k(sim.values, self.cfg.num_candidates)
        losses = torch.zeros(cand.indices.shape)
        for pos in range(batch.tokens.shape[1]):
            masked = torch.zeros_like(batch.keyword_mask)
            masked[:, pos] = batch.keyword_mask[:, pos]
            if not masked.any():
                continue
            tokens = torch.where(masked, torch.full_like(batch.tokens, self.vocab.mask_id), batch.tokens)
            losses = losses + self.candidate_losses(batch, proposals, cand.indices, tokens, masked)
        order = torch.sort(losses, dim=-1, stable=True).indices
        fine = torch.gather(cand.indices, 1, order)
        full_order = torch.sort(sim.values, dim=-1, descending=True, stable=True).indices
        rankings = []
        for row_fine, row_all in zip(fine.tolist(), full_order.tolist()):
            chosen = set(row_fine)
            rankings.append(row_fine + [i for i in row_all if i not in chosen])
        return torch.as_tensor(rankings), losses


def save_checkpoint(path: str | Path, model: GroundingModel, extra: Optional[dict] = None) -> None:
    torch.save({
        "config": model.cfg.to_dict(),
        "vocab": model.vocab.to_sidecar(),
        "object_classes": model.object_classes,
        "text_classes": model.text_classes,
        "attr_dim": model.attr_dim,
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)


def load_checkpoint(path: str | Path) -> GroundingModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    cfg = TrainConfig.from_dict(blob["config"])
    model = GroundingModel(cfg, Vocabulary.from_sidecar(blob["vocab"]), blob["object_classes"],
                           blob["text_classes"], blob["attr_dim"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
