"""Coarse candidate selection: contrastive object-sentence matching and top-K."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F


@dataclass
class SimilarityVector:
    values: torch.Tensor        # (..., M)
    class_term: torch.Tensor
    feature_term: torch.Tensor


@dataclass
class CandidateSet:
    indices: torch.Tensor       # (..., K), descending similarity
    features: Optional[torch.Tensor] = None


def phi(a: torch.Tensor, b: torch.Tensor, kind: str = "dot", scale: float = 1.0) -> torch.Tensor:
    """Similarity of rows ``a (..., M, d)`` against vector ``b (..., d)``."""
    if kind == "dot":
        return torch.einsum("...md,...d->...m", a, b) * scale
    if kind == "cosine":
        return torch.einsum("...md,...d->...m", F.normalize(a, dim=-1), F.normalize(b, dim=-1))
    raise ValueError(f"unknown similarity {kind!r}")


def feature_match_loss(proposal_feats: torch.Tensor, query_feats: torch.Tensor,
                       query_scene: torch.Tensor, scale: float = 1.0) -> torch.Tensor:
    """Contrastive object-sentence loss with scene-level positives.

    ``proposal_feats`` is ``(B, M, d)`` for B scenes, ``query_feats`` is
    ``(S, d)`` and ``query_scene[s]`` names the scene sentence ``s`` belongs
    to. Every proposal of that scene forms a positive pair with the sentence;
    proposals of other scenes are negatives. The per-sentence loss
    ``-log(sum_pos exp / sum_all exp)`` is averaged over sentences.
    """
    query_scene = torch.as_tensor(query_scene, dtype=torch.long)
    num_scenes = proposal_feats.shape[0]
    if num_scenes < 2:
        warnings.warn("feature_match_loss: single-scene batch has no negatives; returning 0",
                      RuntimeWarning, stacklevel=2)
        return proposal_feats.new_zeros(())
    logits = torch.einsum("bmd,sd->sbm", proposal_feats, query_feats) * scale
    log_pos = torch.logsumexp(logits[torch.arange(len(query_scene)), query_scene], dim=-1)
    log_all = torch.logsumexp(logits.flatten(1), dim=-1)
    return (log_all - log_pos).mean()


def object_sentence_similarity(proposal_feats: torch.Tensor, proposal_class_probs: torch.Tensor,
                               sentence_feat: torch.Tensor, sentence_class_probs: torch.Tensor,
                               class_transform: torch.Tensor, kind: str = "dot",
                               feature_scale: Optional[float] = None,
                               use_class: bool = True, use_feature: bool = True) -> SimilarityVector:
    """Class-level plus feature-level similarity per proposal.

    ``feature_scale`` defaults to ``1/sqrt(d)`` for the dot product; pass 1.0
    for the raw sum. Shapes: proposals ``(..., M, d)`` / ``(..., M, N_o)``,
    sentence ``(..., d)`` / ``(..., N_t)``, transform ``(N_o, N_t)``.
    """
    m, d = proposal_feats.shape[-2:]
    if proposal_class_probs.shape[-2] != m:
        raise ValueError("proposal features and class predictions disagree on M")
    if proposal_class_probs.shape[-1] != class_transform.shape[0]:
        raise ValueError("class transform rows must match the object class count")
    if sentence_class_probs.shape[-1] != class_transform.shape[1]:
        raise ValueError("class transform columns must match the text class count")
    if sentence_feat.shape[-1] != d:
        raise ValueError("sentence and proposal feature widths differ")
    if feature_scale is None:
        feature_scale = d ** -0.5
    transferred = proposal_class_probs @ class_transform
    class_term = phi(transferred, sentence_class_probs, kind)
    feature_term = phi(proposal_feats, sentence_feat, kind, feature_scale)
    if not use_class:
        class_term = torch.zeros_like(class_term)
    if not use_feature:
        feature_term = torch.zeros_like(feature_term)
    return SimilarityVector(class_term + feature_term, class_term, feature_term)


def select_top_k(similarity, k: int, proposal_feats: Optional[torch.Tensor] = None) -> CandidateSet:
    """Indices of the ``k`` largest similarities; ties go to the lower index."""
    values = similarity.values if isinstance(similarity, SimilarityVector) else torch.as_tensor(similarity)
    m = values.shape[-1]
    if not 1 <= k <= m:
        raise ValueError(f"K={k} outside [1, {m}]")
    order = torch.sort(values, dim=-1, descending=True, stable=True).indices[..., :k]
    feats = None
    if proposal_feats is not None:
        feats = torch.gather(proposal_feats, -2,
                             order.unsqueeze(-1).expand(*order.shape, proposal_feats.shape[-1]))
    return CandidateSet(order, feats)
