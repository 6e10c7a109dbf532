"""Cross-modal knowledge transfer between patch encodings and the word-embedding space."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ShapeError
from .masked_encoder import attention


class KnowledgeTransfer(nn.Module):
    """Trajectory patches query projected vocabulary prototypes.

    Shapes: ``H_M`` (..., Q, d_model); ``W_E`` (vocab, d_llm); ``H_E`` (V', D);
    ``H_A`` (..., Q, D); ``H_L`` (T, d_llm); ``H_C`` (..., Q + T, D).
    """

    def __init__(
        self,
        vocab_size: int,
        d_llm: int,
        d_model: int = 16,
        hidden: int = 500,
        n_prototypes: int = 100,
        d_out: int = 64,
    ):
        super().__init__()
        self.d_model, self.hidden = d_model, hidden
        self.vocab_mix = nn.Linear(vocab_size, n_prototypes)
        self.vocab_proj = nn.Linear(d_llm, hidden)
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(hidden, d_model, bias=False)
        self.w_v = nn.Linear(hidden, d_model, bias=False)
        self.up = nn.Linear(d_model, hidden)
        self.text_proj = nn.Linear(d_llm, hidden)
        self.decoder_proj = nn.Linear(hidden, d_out)

    def project_vocab(self, W_E: torch.Tensor) -> torch.Tensor:
        prototypes = self.vocab_mix(W_E.transpose(0, 1)).transpose(0, 1)  # (V', d_llm)
        return self.vocab_proj(prototypes)

    def cross_attend(self, H_M: torch.Tensor, H_E: torch.Tensor, return_weights: bool = False):
        q = self.w_q(H_M)
        k = self.w_k(H_E)
        v = self.w_v(H_E)
        out, weights = attention(q, k, v, scale=1.0 / math.sqrt(self.d_model))
        H_A = self.up(out)
        return (H_A, weights) if return_weights else H_A

    def project_text(self, H_L: torch.Tensor) -> torch.Tensor:
        if H_L.shape[-1] != self.text_proj.in_features:
            raise ShapeError(f"H_L width {H_L.shape[-1]} != {self.text_proj.in_features}")
        return self.text_proj(H_L)

    def fuse(self, H_A: torch.Tensor, H_L: torch.Tensor) -> torch.Tensor:
        """Concatenate per-channel H_A (C, Q, D) with projected H_L (T, d_llm) along the sequence axis."""
        if H_L.shape[0] == 0:
            return H_A
        text = self.project_text(H_L)
        if text.shape[-1] != H_A.shape[-1]:
            raise ShapeError(f"width mismatch: H_A {H_A.shape[-1]} vs text {text.shape[-1]}")
        return torch.cat([H_A, text.expand(*H_A.shape[:-2], *text.shape)], dim=-2)

    def to_decoder_input(self, H_C: torch.Tensor) -> torch.Tensor:
        """Mean-pool H_C over its sequence axis, then map each channel to the decoder width."""
        return self.decoder_proj(H_C.mean(dim=-2))

    def pooled_decoder_input(
        self, H_A: torch.Tensor, H_L: torch.Tensor | None, token_mask: torch.Tensor | None
    ) -> torch.Tensor:
        """Batched ``to_decoder_input(fuse(H_A, H_L))`` with padded prompts.

        H_A (B, C, Q, D); H_L (B, T, d_llm) padded; token_mask (B, T) with 1
        for real tokens.  Padding rows are excluded from the mean.
        """
        total = H_A.sum(dim=-2)
        count = torch.full(H_A.shape[:1], float(H_A.shape[-2]), dtype=H_A.dtype)
        if H_L is not None and H_L.shape[1] > 0:
            m = token_mask.to(H_A.dtype)
            n_tok = m.sum(dim=1)
            # linear map commutes with the sum over real tokens
            text_sum = (H_L * m.unsqueeze(-1)).sum(dim=1) @ self.text_proj.weight.T
            text_sum = text_sum + n_tok.unsqueeze(-1) * self.text_proj.bias
            total = total + text_sum.unsqueeze(1)
            count = count + n_tok
        return self.decoder_proj(total / count.view(-1, 1, 1))
