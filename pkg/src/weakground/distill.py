"""Rank-based rewards, pseudo labels, the matching head and inference."""

from __future__ import annotations

import json
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import AxisAlignedBox


def rewards_from_ranks(ranks, squared: bool = True) -> torch.Tensor:
    """Reward ``((K-1-r)/(K-1))**2`` for rank ``r`` among ``K`` candidates.

    With ``squared=False`` the linear ramp is returned. ``K == 1`` gives a
    single reward of 1.
    """
    ranks = torch.as_tensor(ranks)
    k = ranks.shape[-1]
    if k == 1:
        return torch.ones(ranks.shape, dtype=torch.float64)
    expected = torch.arange(k).expand_as(ranks)
    if not torch.equal(torch.sort(ranks, dim=-1).values, expected):
        raise ValueError("ranks must be a permutation of 0..K-1")
    linear = (k - 1 - ranks).to(torch.float64) / (k - 1)
    return linear ** 2 if squared else linear


def pseudo_labels(rewards, candidate_indices, num_proposals: int,
                  temperature: float = 1.0) -> torch.Tensor:
    """Scatter candidate rewards into a zero vector of length ``num_proposals``
    and apply a softmax."""
    rewards = torch.as_tensor(rewards)
    idx = torch.as_tensor(candidate_indices, dtype=torch.long)
    if rewards.shape != idx.shape:
        raise ValueError("rewards and candidate indices must have the same shape")
    if int(idx.max()) >= num_proposals or int(idx.min()) < 0:
        raise ValueError("candidate index out of range")
    sorted_idx = torch.sort(idx, dim=-1).values
    if (sorted_idx[..., 1:] == sorted_idx[..., :-1]).any():
        raise ValueError("duplicate candidate indices")
    filled = rewards.new_zeros(*idx.shape[:-1], num_proposals)
    filled.scatter_(-1, idx, rewards)
    return torch.softmax(filled / temperature, dim=-1)


def candidate_mass(d: torch.Tensor, candidate_indices) -> torch.Tensor:
    """Fraction of pseudo-label mass on the candidates (diagnostic)."""
    idx = torch.as_tensor(candidate_indices, dtype=torch.long)
    return torch.gather(d, -1, idx).sum(-1)


class MatchingHead(nn.Module):
    """One layer of multi-head cross-attention (object queries, text keys and
    values). The attended text context is fused with each object feature by a
    residual sum and an elementwise product, then mapped to one score per
    proposal."""

    def __init__(self, hidden_dim: int, num_heads: int = 4):
        super().__init__()
        self.attn = nn.MultiheadAttention(hidden_dim, num_heads, batch_first=True)
        self.norm = nn.LayerNorm(hidden_dim)
        self.mlp = nn.Sequential(nn.Linear(2 * hidden_dim, hidden_dim), nn.ReLU())
        self.score = nn.Linear(hidden_dim, 1)

    def forward(self, object_feats: torch.Tensor, text_states: torch.Tensor,
                text_pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        squeeze = object_feats.dim() == 2
        if squeeze:
            object_feats, text_states = object_feats.unsqueeze(0), text_states.unsqueeze(0)
            text_pad_mask = text_pad_mask.unsqueeze(0) if text_pad_mask is not None else None
        if object_feats.shape[-1] != text_states.shape[-1]:
            raise ValueError("object and text feature widths differ")
        ctx, _ = self.attn(object_feats, text_states, text_states,
                           key_padding_mask=text_pad_mask, need_weights=False)
        h = self.norm(object_feats + ctx)
        s = self.score(self.mlp(torch.cat([h, object_feats * ctx], dim=-1))).squeeze(-1)
        return s.squeeze(0) if squeeze else s


def matching_scores(object_feats: torch.Tensor, text_states: torch.Tensor, head: MatchingHead,
                    text_pad_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return head(object_feats, text_states, text_pad_mask)


def distill_loss(scores: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Cross-entropy from ``softmax(scores)`` to the pseudo label, averaged over
    leading dimensions."""
    if scores.shape != d.shape:
        raise ValueError("scores and pseudo labels must have the same shape")
    return -(d * F.log_softmax(scores, dim=-1)).sum(-1).mean()


def infer_top_n(scores, n: int) -> list[int]:
    s = torch.as_tensor(scores)
    if s.numel() == 0:
        raise ValueError("empty scores")
    n = min(n, s.shape[-1])
    return torch.sort(s, descending=True, stable=True).indices[:n].tolist()


def infer_best(scores, proposals=None) -> tuple[int, Optional[AxisAlignedBox]]:
    """Argmax proposal (lowest index on ties) and its box when proposals are given."""
    idx = infer_top_n(scores, 1)[0]
    box = proposals.box(idx) if proposals is not None else None
    return idx, box


def export_pseudo_label(query_id, d, candidates: Sequence[int], rewards) -> str:
    return json.dumps({
        "query_id": query_id,
        "d": [float(x) for x in torch.as_tensor(d).tolist()],
        "candidates": [int(c) for c in candidates],
        "rewards": [float(r) for r in torch.as_tensor(rewards).tolist()],
    })
