"""Fine-grained matching by masked keyword reconstruction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class MaskedQueryEncoding:
    states: torch.Tensor            # (..., L, d)
    mask: torch.Tensor              # (..., L) bool, True at masked positions
    pad_mask: Optional[torch.Tensor] = None  # (..., L) bool, True at padding


@dataclass
class ReconstructionOutput:
    states: torch.Tensor            # (..., L, d)
    energies: torch.Tensor          # (..., L, N_v)
    loss: Optional[torch.Tensor] = None


class ReconstructionDecoder(nn.Module):
    """Transformer decoder: token states attend to each other and to a single
    candidate feature, then a linear layer maps to vocabulary energies."""

    def __init__(self, hidden_dim: int, vocab_size: int, num_layers: int = 2, num_heads: int = 4):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.layers = nn.ModuleList([
            nn.TransformerDecoderLayer(hidden_dim, num_heads, 2 * hidden_dim, dropout=0.0,
                                       batch_first=True)
            for _ in range(num_layers)])
        self.vocab_proj = nn.Linear(hidden_dim, vocab_size)

    def forward(self, token_states: torch.Tensor, candidate: torch.Tensor,
                pad_mask: Optional[torch.Tensor] = None):
        if token_states.shape[-1] != self.hidden_dim or candidate.shape[-1] != self.hidden_dim:
            raise ValueError("decoder input width mismatch")
        lead = token_states.shape[:-2]
        length = token_states.shape[-2]
        x = token_states.reshape(-1, length, self.hidden_dim)
        memory = candidate.reshape(-1, 1, self.hidden_dim)
        if memory.shape[0] != x.shape[0]:
            raise ValueError("one candidate per token sequence required")
        pm = pad_mask.reshape(-1, length) if pad_mask is not None else None
        for layer in self.layers:
            x = layer(x, memory, tgt_key_padding_mask=pm)
        energies = self.vocab_proj(x)
        return x.reshape(*lead, length, -1), energies.reshape(*lead, length, -1)


def reconstruct(query: MaskedQueryEncoding, candidate: torch.Tensor,
                decoder: ReconstructionDecoder) -> ReconstructionOutput:
    states, energies = decoder(query.states, candidate, query.pad_mask)
    return ReconstructionOutput(states, energies)


def reconstruction_loss(energies: torch.Tensor, tokens: torch.Tensor,
                        mask: torch.Tensor) -> torch.Tensor:
    """Summed negative log-likelihood of the original tokens at masked positions.

    Returns one value per leading index (e.g. ``(S, K)`` for ``(S, K, L, N_v)``).
    """
    tokens = torch.as_tensor(tokens, dtype=torch.long).expand(energies.shape[:-1])
    mask = torch.as_tensor(mask, dtype=torch.bool).expand(energies.shape[:-1])
    nll = -torch.gather(F.log_softmax(energies, dim=-1), -1, tokens.unsqueeze(-1)).squeeze(-1)
    # where() instead of multiply: unmasked energies cannot leak into the sum, even as NaN
    return torch.where(mask, nll, torch.zeros_like(nll)).sum(-1)


def autoregressive_loss(energies: torch.Tensor, tokens: torch.Tensor,
                        valid: torch.Tensor) -> torch.Tensor:
    """Next-token variant: position i predicts token i+1 over the valid span."""
    tokens = torch.as_tensor(tokens, dtype=torch.long).expand(energies.shape[:-1])
    valid = torch.as_tensor(valid, dtype=torch.bool).expand(energies.shape[:-1])
    logp = F.log_softmax(energies[..., :-1, :], dim=-1)
    nll = -torch.gather(logp, -1, tokens[..., 1:].unsqueeze(-1)).squeeze(-1)
    keep = valid[..., 1:]
    return torch.where(keep, nll, torch.zeros_like(nll)).sum(-1)


def total_reconstruction_loss(per_candidate: torch.Tensor) -> torch.Tensor:
    return per_candidate.sum(-1)


def rank_candidates(losses) -> torch.Tensor:
    """Dense ranks by ascending loss (0 = best); ties go to the lower index."""
    losses = torch.as_tensor(losses).detach()
    if torch.isnan(losses).any():
        raise ValueError("NaN reconstruction loss")
    order = torch.sort(losses, dim=-1, stable=True).indices
    positions = torch.arange(losses.shape[-1]).expand_as(order)
    return torch.empty_like(order).scatter_(-1, order, positions)
