"""Comparison methods: random ranking and the two MIL objectives."""

from __future__ import annotations

import warnings

import numpy as np
import torch


def random_baseline(num_proposals: int, seed: int) -> list[int]:
    """A uniformly random ranking of proposal indices."""
    return np.random.default_rng(seed).permutation(num_proposals).tolist()


def proposal_sentence_scores(proposal_feats: torch.Tensor, query_feats: torch.Tensor,
                             scale: float = 1.0) -> torch.Tensor:
    """``phi`` of every sentence against every proposal: ``(S, B, M)``."""
    return torch.einsum("bmd,sd->sbm", proposal_feats, query_feats) * scale


def scene_sentence_scores(pair_scores: torch.Tensor, pooling: str = "max") -> torch.Tensor:
    """Pool ``(S, B, M)`` proposal scores into sentence-scene scores ``(S, B)``."""
    if pooling == "max":
        return pair_scores.max(-1).values
    if pooling == "mean":
        return pair_scores.mean(-1)
    raise ValueError(f"unknown pooling {pooling!r}")


def mil_margin_loss(scores: torch.Tensor, query_scene, margin: float = 0.2) -> torch.Tensor:
    """Bidirectional hinge on sentence-scene scores ``(S, B)``.

    Sentence to scene: each sentence's paired score must beat its score with
    every other scene by ``margin``. Scene to sentence: a scene's score with
    its own sentence must beat its score with sentences from other scenes.
    All hinge terms are averaged.
    """
    query_scene = torch.as_tensor(query_scene, dtype=torch.long)
    s, b = scores.shape
    if b < 2:
        warnings.warn("mil_margin_loss: single-scene batch; returning 0", RuntimeWarning, stacklevel=2)
        return scores.new_zeros(())
    rows = torch.arange(s)
    pos = scores[rows, query_scene]                                   # (S,)
    neg_scene = query_scene[:, None] != torch.arange(b)[None]        # (S, B)
    to_scene = torch.clamp(margin - pos[:, None] + scores, min=0.0)[neg_scene]
    # scores[q', scene(q)] for sentences q' not paired with scene(q)
    cross = scores[:, query_scene].T                                  # (S_q, S_q')
    neg_sent = query_scene[:, None] != query_scene[None]
    to_sentence = torch.clamp(margin - pos[:, None] + cross, min=0.0)[neg_sent]
    terms = torch.cat([to_scene, to_sentence])
    return terms.mean()


def mil_nce_loss(pair_scores: torch.Tensor, query_scene) -> torch.Tensor:
    """InfoNCE with the paired scene's proposals as the positive bag.

    ``pair_scores`` is ``(S, B, M)`` from :func:`proposal_sentence_scores`.
    """
    query_scene = torch.as_tensor(query_scene, dtype=torch.long)
    if pair_scores.shape[1] < 2:
        warnings.warn("mil_nce_loss: single-scene batch; returning 0", RuntimeWarning, stacklevel=2)
        return pair_scores.new_zeros(())
    log_pos = torch.logsumexp(pair_scores[torch.arange(len(query_scene)), query_scene], dim=-1)
    log_all = torch.logsumexp(pair_scores.flatten(1), dim=-1)
    return (log_all - log_pos).mean()
