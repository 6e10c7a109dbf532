"""Masked patch encoder over channel-independent trajectory series.

Tensor layout used throughout: ``(batch, channels, patches, d_model)``.  Every
channel shares the same weights but is processed independently; attention runs
over the patch axis only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, PreconditionError

# periods (seconds) for the timestamp features; spans one sample interval up to two days
TIME_PERIODS = (120.0, 600.0, 1800.0, 3600.0, 4 * 3600.0, 12 * 3600.0, 86400.0, 2 * 86400.0)


def patch_count(h: int, patch_len: int, stride: int) -> int:
    return (h - patch_len) // stride + 2


@dataclass
class PatchSet:
    patches: torch.Tensor  # (..., channels, Q, patch_len)
    patch_len: int
    stride: int

    @property
    def Q(self) -> int:
        return self.patches.shape[-2]

    @property
    def channel_count(self) -> int:
        return self.patches.shape[-3]


def _unfold_time(series: torch.Tensor, patch_len: int, stride: int) -> torch.Tensor:
    # series (..., L): replicate the last step `stride` times, then slide
    pad = series[..., -1:].expand(*series.shape[:-1], stride)
    return torch.cat([series, pad], dim=-1).unfold(-1, patch_len, stride)


def patchify(x: torch.Tensor, patch_len: int = 16, stride: int = 8) -> PatchSet:
    """Split ``x`` of shape (..., h, channels) into per-channel patches."""
    h = x.shape[-2]
    if h < patch_len:
        raise PreconditionError(f"history length {h} is shorter than patch length {patch_len}")
    return PatchSet(_unfold_time(x.transpose(-1, -2), patch_len, stride), patch_len, stride)


def patch_times(t: torch.Tensor, patch_len: int, stride: int) -> torch.Tensor:
    """Mean timestamp of each patch; ``t`` is (..., h)."""
    return _unfold_time(t, patch_len, stride).mean(dim=-1)


def sinusoidal_positions(n: int, d: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe.to(dtype)


class TimestampEmbedding(nn.Module):
    """Sine/cosine features of relative time at fixed periods, then a learned map."""

    def __init__(self, d_out: int, periods=TIME_PERIODS):
        super().__init__()
        self.register_buffer("omega", 2 * math.pi / torch.tensor(periods), persistent=False)
        self.proj = nn.Linear(2 * len(periods) + 1, d_out)

    def features(self, t_rel: torch.Tensor) -> torch.Tensor:
        phase = t_rel.unsqueeze(-1) * self.omega.to(t_rel.dtype)
        return torch.cat([torch.sin(phase), torch.cos(phase), t_rel.unsqueeze(-1) / 3600.0], dim=-1)

    def forward(self, t_rel: torch.Tensor) -> torch.Tensor:
        return self.proj(self.features(t_rel))


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, scale: float | None = None):
    """Scaled dot-product attention returning (output, weights)."""
    scale = 1.0 / math.sqrt(q.shape[-1]) if scale is None else scale
    weights = torch.softmax(q @ k.transpose(-1, -2) * scale, dim=-1)
    return weights @ v, weights


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.last_weights: torch.Tensor | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        *lead, n, d = x.shape
        q, k, v = self.qkv(x).reshape(*lead, n, 3, self.n_heads, d // self.n_heads).unbind(-3)
        q, k, v = (z.transpose(-2, -3) for z in (q, k, v))  # (..., heads, n, d_head)
        y, self.last_weights = attention(q, k, v)
        return self.out(y.transpose(-2, -3).reshape(*lead, n, d))


class EncoderBlock(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


@dataclass
class MaskPlan:
    masked_indices: torch.Tensor  # (..., channels, k) patch indices
    ratio: float


def mask_count(Q: int, ratio: float) -> int:
    return max(1, int(math.floor(Q * ratio)))


def apply_mask(
    H: torch.Tensor,
    ratio: float,
    generator: torch.Generator | None,
    mask_token: torch.Tensor,
    context: torch.Tensor | None = None,
) -> tuple[torch.Tensor, MaskPlan | None]:
    """Replace ``max(1, floor(Q * ratio))`` patch rows per channel with the mask token.

    ``context`` (broadcastable to H) is added back onto masked rows, so a
    masked patch keeps its position and timestamp encoding.  ``ratio == 0``
    returns H untouched.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"mask ratio must lie in [0, 1], got {ratio}")
    if ratio == 0.0:
        return H, None
    Q = H.shape[-2]
    if Q < 1:
        raise PreconditionError("cannot mask an empty patch sequence")
    k = mask_count(Q, ratio)
    scores = torch.rand(H.shape[:-1], generator=generator)
    idx = scores.argsort(dim=-1)[..., :k]
    masked = torch.zeros(H.shape[:-1], dtype=torch.bool).scatter_(-1, idx, True).unsqueeze(-1)
    fill = mask_token.to(H.dtype).expand_as(H)
    if context is not None:
        fill = fill + context.expand_as(H)
    return torch.where(masked, fill, H), MaskPlan(idx, ratio)


class MaskedEncoder(nn.Module):
    def __init__(
        self,
        h: int = 24,
        n_channels: int = 4,
        patch_len: int = 16,
        stride: int = 8,
        d_model: int = 16,
        n_layers: int = 2,
        n_heads: int = 4,
        d_ff: int = 64,
        mask_ratio: float = 0.5,
    ):
        super().__init__()
        if h < patch_len:
            raise ConfigError(f"history length {h} is shorter than patch length {patch_len}")
        self.h, self.n_channels = h, n_channels
        self.patch_len, self.stride, self.d_model = patch_len, stride, d_model
        self.mask_ratio = mask_ratio
        self.Q = patch_count(h, patch_len, stride)
        self.value = nn.Linear(patch_len, d_model)
        self.time = TimestampEmbedding(d_model)
        self.register_buffer("pos", sinusoidal_positions(self.Q, d_model), persistent=False)
        self.mask_token = nn.Parameter(torch.zeros(d_model))
        self.blocks = nn.ModuleList(EncoderBlock(d_model, n_heads, d_ff) for _ in range(n_layers))
        # lon and lat channel encodings -> h x 2 positions
        self.recon = nn.Linear(2 * self.Q * d_model, 2 * h)

    def context(self, t_rel: torch.Tensor) -> torch.Tensor:
        """Position + timestamp encoding per patch, shape (B, 1, Q, d)."""
        tp = patch_times(t_rel, self.patch_len, self.stride)
        return (self.pos.to(t_rel.dtype) + self.time(tp)).unsqueeze(-3)

    def embed(self, x: torch.Tensor, t_rel: torch.Tensor) -> torch.Tensor:
        """x (B, h, C) normalized history, t_rel (B, h) seconds -> (B, C, Q, d)."""
        return self.value(patchify(x, self.patch_len, self.stride).patches) + self.context(t_rel)

    def mask(self, H: torch.Tensor, t_rel: torch.Tensor, generator: torch.Generator | None, ratio=None):
        ratio = self.mask_ratio if ratio is None else ratio
        return apply_mask(H, ratio, generator, self.mask_token, self.context(t_rel))

    def encode(self, H: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            H = block(H)
        return H

    def attention_weights(self) -> list[torch.Tensor]:
        return [b.attn.last_weights for b in self.blocks]

    def reconstruct(self, encoded: torch.Tensor) -> torch.Tensor:
        flat = encoded[..., :2, :, :].flatten(-3)
        return self.recon(flat).unflatten(-1, (2, self.h)).transpose(-1, -2)

    def forward(self, x, t_rel, generator=None, masking: bool = True):
        H = self.embed(x, t_rel)
        if masking:
            H, _ = self.mask(H, t_rel, generator)
        encoded = self.encode(H)
        return encoded, self.reconstruct(encoded)


def reconstruction_mae(recon: torch.Tensor, x_norm: torch.Tensor) -> torch.Tensor:
    """Per-sample MAE between reconstructed and normalized history positions."""
    return F.l1_loss(recon, x_norm[..., :2], reduction="none").flatten(-2).mean(-1)
