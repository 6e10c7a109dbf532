"""Turn trajectory samples into model-ready tensors.

Everything the model reads is derived from the history window and the future
*timestamps*; future positions only feed the targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .data import NormStats, TrajectorySample, instance_normalize
from .kinematics import acceleration_series, meters_per_degree, velocity_series
from .prompt_lm import FrozenLMProvider, Tokenizer, build_prompt, embed_tokens


@dataclass(eq=False)
class PreparedSample:
    sample: TrajectorySample
    stats: NormStats
    x_norm: np.ndarray  # (h, C)
    t_hist: np.ndarray  # (h,) seconds relative to the last history timestamp
    t_fut: np.ndarray  # (p,)
    fut_norm: np.ndarray  # (p, 2)
    vel_true: np.ndarray  # (p-1,) m/s
    acc_true: np.ndarray  # (p-2,) m/s^2
    vel_scale: float  # m/s per head unit
    acc_scale: float  # m/s^2 per head unit
    prompt: str
    token_ids: list[int]
    H_L: torch.Tensor  # (T, d_llm)


def kinematic_scales(stats: NormStats, t_hist: np.ndarray) -> tuple[float, float]:
    """Convert head outputs (normalized degrees per mean history interval) to m/s and m/s^2."""
    dt_ref = float(np.mean(np.diff(t_hist))) if len(t_hist) > 1 else 1.0
    deg = float(np.mean(stats.scale[:2]))
    vel_scale = deg * meters_per_degree() / dt_ref
    return vel_scale, vel_scale / dt_ref


def prepare_sample(
    sample: TrajectorySample,
    provider: FrozenLMProvider,
    dataset_name: str = "synthetic",
    tokenizer: Tokenizer | None = None,
) -> PreparedSample:
    x_norm, stats = instance_normalize(sample.history_features)
    t_last = sample.history_timestamps[-1]
    t_hist = (sample.history_timestamps - t_last).astype(np.float64)
    t_fut = (sample.future_timestamps - t_last).astype(np.float64)
    fut_norm = (sample.future_positions - stats.mean[:2]) / stats.scale[:2]
    vel = velocity_series(sample.future_positions, sample.future_timestamps)
    acc = acceleration_series(vel, sample.future_timestamps) if len(vel) >= 2 else np.zeros(0)
    vel_scale, acc_scale = kinematic_scales(stats, t_hist)
    prompt = build_prompt(sample, dataset_name)
    ids = (tokenizer or Tokenizer(provider))(prompt)
    return PreparedSample(
        sample, stats, x_norm, t_hist, t_fut, fut_norm, vel, acc, vel_scale, acc_scale, prompt, ids,
        embed_tokens(ids, provider),
    )


def prepare_samples(samples: Sequence[TrajectorySample], provider, dataset_name="synthetic") -> list[PreparedSample]:
    tok = Tokenizer(provider)
    return [prepare_sample(s, provider, dataset_name, tok) for s in samples]


@dataclass
class Batch:
    x: torch.Tensor  # (B, h, C)
    t_hist: torch.Tensor  # (B, h)
    t_fut: torch.Tensor  # (B, p)
    tokens: torch.Tensor  # (B, T, d_llm) zero padded
    token_mask: torch.Tensor  # (B, T)
    fut_norm: torch.Tensor  # (B, p, 2)
    vel_true: torch.Tensor
    acc_true: torch.Tensor
    vel_scale: torch.Tensor  # (B,)
    acc_scale: torch.Tensor
    pos_mean: torch.Tensor  # (B, 2) degrees
    pos_scale: torch.Tensor  # (B, 2) degrees per normalized unit

    def __len__(self) -> int:
        return self.x.shape[0]


def collate(items: Sequence[PreparedSample], dtype=torch.float32) -> Batch:
    def stack(arrays):
        return torch.as_tensor(np.stack(arrays), dtype=dtype)

    n_tok = max((len(it.token_ids) for it in items), default=0)
    d_llm = items[0].H_L.shape[-1]
    tokens = torch.zeros(len(items), n_tok, d_llm, dtype=dtype)
    mask = torch.zeros(len(items), n_tok, dtype=dtype)
    for i, it in enumerate(items):
        T = len(it.token_ids)
        tokens[i, :T] = it.H_L.to(dtype)
        mask[i, :T] = 1.0
    return Batch(
        x=stack([it.x_norm for it in items]),
        t_hist=stack([it.t_hist for it in items]),
        t_fut=stack([it.t_fut for it in items]),
        tokens=tokens,
        token_mask=mask,
        fut_norm=stack([it.fut_norm for it in items]),
        vel_true=stack([it.vel_true for it in items]),
        acc_true=stack([it.acc_true for it in items]),
        vel_scale=torch.tensor([it.vel_scale for it in items], dtype=dtype),
        acc_scale=torch.tensor([it.acc_scale for it in items], dtype=dtype),
        pos_mean=stack([it.stats.mean[:2] for it in items]),
        pos_scale=stack([it.stats.scale[:2] for it in items]),
    )
