"""The assembled forecaster and its ablation variants."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn

from .batching import Batch
from .data import TrajectorySample
from .errors import ConfigError
from .fusion import KnowledgeTransfer
from .masked_encoder import EncoderBlock, MaskedEncoder, TimestampEmbedding


@dataclass(frozen=True)
class AblationFlags:
    use_llm: bool = True
    use_prompt: bool = True
    use_fusion: bool = True
    use_decoder: bool = True
    use_ksl: bool = True

    def validate(self) -> "AblationFlags":
        if self.use_fusion and not self.use_llm:
            raise ConfigError("use_fusion requires use_llm: cross-attention keys come from the language model")
        return self


VARIANTS: dict[str, AblationFlags] = {
    "MAKER": AblationFlags(),
    "MAKER-LLM": AblationFlags(use_llm=False, use_prompt=False, use_fusion=False),
    "MAKER-Prompt": AblationFlags(use_prompt=False),
    "MAKER-MKT": AblationFlags(use_fusion=False),
    "MAKER-de": AblationFlags(use_decoder=False),
    "MAKER-KSL": AblationFlags(use_ksl=False),
}


def variant_flags(name: str) -> AblationFlags:
    if name not in VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {list(VARIANTS)}")
    return VARIANTS[name]


@dataclass(frozen=True)
class ModelConfig:
    h: int = 24
    p: int = 24
    n_channels: int = 4
    patch_len: int = 16
    stride: int = 8
    d_model: int = 16
    enc_layers: int = 2
    enc_heads: int = 4
    hidden: int = 500
    n_prototypes: int = 100
    d_dec: int = 64
    dec_layers: int = 2
    dec_heads: int = 4
    mask_ratio: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelOutput:
    pred_positions: torch.Tensor  # (B, p, 2) normalized
    recon_positions: torch.Tensor  # (B, h, 2) normalized
    pred_velocity: torch.Tensor  # (B, p-1) head units
    pred_acceleration: torch.Tensor  # (B, p-2) head units


class InvertedDecoder(nn.Module):
    """Attention across variate tokens, one token per input channel."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_dec
        self.series_embed = nn.Linear(2 * cfg.h, d)
        self.time = TimestampEmbedding(d)
        self.time_scale = TimestampEmbedding(d)
        self.blocks = nn.ModuleList(EncoderBlock(d, cfg.dec_heads, 4 * d) for _ in range(cfg.dec_layers))
        self.norm = nn.LayerNorm(d)
        self.horizon_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, 1))
        self.vel_head = nn.Linear(cfg.n_channels * d, cfg.p - 1)
        self.acc_head = nn.Linear(cfg.n_channels * d, cfg.p - 2)

    def forward(self, H_G: torch.Tensor, x: torch.Tensor, t_hist: torch.Tensor, t_fut: torch.Tensor):
        fut = self.time(t_fut)  # (B, p, d)
        # each variate token sees its whole normalized series plus the history timing
        rel = (t_hist / t_fut[:, -1:]).unsqueeze(1).expand(-1, x.shape[2], -1)
        tokens = H_G + self.series_embed(torch.cat([x.transpose(1, 2), rel], dim=-1)) + fut.mean(dim=1, keepdim=True)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        # broadcast lon/lat tokens over the horizon and add each future step's time embedding
        per_step = tokens[:, :2, None, :] * (1 + self.time_scale(t_fut)[:, None]) + fut[:, None, :, :]
        pred = self.horizon_head(per_step).squeeze(-1).transpose(1, 2)
        flat = tokens.flatten(1)
        return pred, self.vel_head(flat), self.acc_head(flat)

    def attention_weights(self) -> list[torch.Tensor]:
        return [b.attn.last_weights for b in self.blocks]


class LinearHead(nn.Module):
    """Decoder replacement for the MAKER-de variant: flat variate embeddings -> p x 2."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        width = cfg.n_channels * cfg.d_dec
        self.pos = nn.Linear(width, cfg.p * 2)
        self.vel_head = nn.Linear(width, cfg.p - 1)
        self.acc_head = nn.Linear(width, cfg.p - 2)

    def forward(self, H_G, x, t_hist, t_fut):
        flat = H_G.flatten(1)
        return self.pos(flat).unflatten(-1, (-1, 2)), self.vel_head(flat), self.acc_head(flat)


class MakerModel(nn.Module):
    def __init__(self, cfg: ModelConfig, flags: AblationFlags, word_embeddings: torch.Tensor):
        super().__init__()
        flags.validate()
        if cfg.p < 3:
            raise ConfigError("p must be >= 3 so the acceleration head has outputs")
        self.cfg, self.flags = cfg, flags
        vocab, d_llm = word_embeddings.shape
        self.encoder = MaskedEncoder(
            cfg.h, cfg.n_channels, cfg.patch_len, cfg.stride, cfg.d_model, cfg.enc_layers, cfg.enc_heads,
            4 * cfg.d_model, cfg.mask_ratio,
        )
        self.fusion = KnowledgeTransfer(vocab, d_llm, cfg.d_model, cfg.hidden, cfg.n_prototypes, cfg.d_dec)
        # route used when fusion is switched off
        self.bypass_seq = nn.Linear(cfg.d_model, cfg.d_dec)
        self.bypass_text = nn.Linear(d_llm, cfg.d_dec)
        self.decoder = InvertedDecoder(cfg)
        self.linear_head = LinearHead(cfg)
        # frozen provider table: not a parameter, not saved with the weights
        self.register_buffer("word_embeddings", word_embeddings.detach().clone(), persistent=False)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def decoder_input(self, encoded: torch.Tensor, batch: Batch) -> torch.Tensor:
        flags = self.flags
        with_text = flags.use_llm and flags.use_prompt and batch.tokens.shape[1] > 0
        tokens = batch.tokens.to(encoded.dtype) if with_text else None
        if flags.use_fusion:
            H_E = self.fusion.project_vocab(self.word_embeddings.to(encoded.dtype))
            H_A = self.fusion.cross_attend(encoded, H_E)
            return self.fusion.pooled_decoder_input(H_A, tokens, batch.token_mask.to(encoded.dtype))
        H_G = self.bypass_seq(encoded.mean(dim=-2))
        if tokens is not None:
            m = batch.token_mask.to(encoded.dtype).unsqueeze(-1)
            pooled = (tokens * m).sum(1) / m.sum(1).clamp_min(1.0)
            H_G = H_G + self.bypass_text(pooled).unsqueeze(1)
        return H_G

    def forward(self, batch: Batch, generator: torch.Generator | None = None, masking: bool | None = None):
        """Predict from history records, history timestamps and future timestamps only.

        Masking defaults to on in training mode and off in eval mode.
        """
        masking = self.training if masking is None else masking
        dtype = next(self.parameters()).dtype
        x, t_hist, t_fut = batch.x.to(dtype), batch.t_hist.to(dtype), batch.t_fut.to(dtype)
        encoded, recon = self.encoder(x, t_hist, generator, masking)
        H_G = self.decoder_input(encoded, batch)
        head = self.decoder if self.flags.use_decoder else self.linear_head
        pred, vel, acc = head(H_G, x, t_hist, t_fut)
        return ModelOutput(pred, recon, vel, acc)


def init_model(
    seed: int, cfg: ModelConfig, flags: AblationFlags, word_embeddings: torch.Tensor, dtype=torch.float32
) -> MakerModel:
    """Deterministic initialization: fan-in scaled uniform linear maps, small normal mask token."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = MakerModel(cfg, flags, word_embeddings)
        nn.init.normal_(model.encoder.mask_token, std=0.02)
    return model.to(dtype)


def parameter_checksum(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def constant_velocity_baseline(sample: TrajectorySample, steps: int = 3) -> np.ndarray:
    """Extrapolate the last position with the mean lon/lat velocity of the last ``steps`` steps."""
    pos = sample.history_positions
    t = sample.history_timestamps.astype(np.float64)
    k = min(steps, len(pos) - 1)
    vel = np.diff(pos[-k - 1 :], axis=0) / np.diff(t[-k - 1 :])[:, None]
    v = vel.mean(axis=0)
    return pos[-1] + np.outer(sample.future_timestamps.astype(np.float64) - t[-1], v)


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
