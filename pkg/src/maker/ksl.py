"""Kinematics-guided self-paced training.

Each optimizer step alternates the two blocks of the self-paced objective:
with the weights fixed, pick the "easy" samples whose easiness loss is below
the pace ``lam``; with that selection fixed, take one Adam step.  ``lam``
grows geometrically once per step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .batching import Batch, PreparedSample, collate
from .errors import ConfigError
from .forecaster import MakerModel, ModelOutput
from .masked_encoder import reconstruction_mae

log = logging.getLogger(__name__)

GATE_SCOPES = ("recon_kinematic", "all")


@dataclass(frozen=True)
class EasinessState:
    lam: float = 0.2
    growth: float = 1.0003
    v: tuple[int, ...] = ()

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"pace lambda must be positive, got {self.lam}")


def advance_pace(state: EasinessState) -> EasinessState:
    return replace(state, lam=state.lam * state.growth)


def easiness(losses, lam: float) -> np.ndarray:
    """v_i = 1 iff loss_i < lam."""
    if lam <= 0:
        raise ConfigError(f"pace lambda must be positive, got {lam}")
    return (np.asarray(losses, dtype=np.float64) < lam).astype(np.int64)


def spl_objective(losses, v, lam: float) -> float:
    """sum_i v_i * loss_i - lam * sum_i v_i.

    Summed as sum_i v_i * (loss_i - lam) with exact rounding, so the sign of
    every term is exact and the threshold selection is a true minimizer in floats.
    """
    losses = np.asarray(losses, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return math.fsum((v * (losses - lam)).tolist())


@dataclass
class LossBreakdown:
    pred_mae: float
    recon_mae: float
    vel_mae: float
    acc_mae: float
    easiness_loss: float
    total: float


def per_sample_losses(
    out: ModelOutput, batch: Batch, vel_weight: float = 1.0, acc_weight: float = 1.0
) -> dict[str, torch.Tensor]:
    """Per-sample loss components, each of shape (B,)."""
    dtype = out.pred_positions.dtype
    pred = F.l1_loss(out.pred_positions, batch.fut_norm.to(dtype), reduction="none").flatten(1).mean(1)
    recon = reconstruction_mae(out.recon_positions, batch.x.to(dtype))
    vel_mps = out.pred_velocity * batch.vel_scale.to(dtype).unsqueeze(1)
    acc_mps2 = out.pred_acceleration * batch.acc_scale.to(dtype).unsqueeze(1)
    vel = (vel_mps - batch.vel_true.to(dtype)).abs().mean(1)
    acc = (acc_mps2 - batch.acc_true.to(dtype)).abs().mean(1)
    return {
        "pred_mae": pred,
        "recon_mae": recon,
        "vel_mae": vel,
        "acc_mae": acc,
        "easiness_loss": recon + vel_weight * vel + acc_weight * acc,
    }


def sample_losses(out: ModelOutput, batch: Batch) -> list[LossBreakdown]:
    parts = per_sample_losses(out, batch)
    rows = []
    for i in range(len(batch)):
        vals = {k: float(v[i]) for k, v in parts.items()}
        rows.append(LossBreakdown(**vals, total=vals["pred_mae"] + vals["easiness_loss"]))
    return rows


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 10
    lam0: float = 0.2
    growth: float = 1.0003
    gate_scope: str = "recon_kinematic"
    vel_weight: float = 1.0
    acc_weight: float = 1.0
    seed: int = 0
    log_per_sample: bool = True

    def __post_init__(self):
        if self.gate_scope not in GATE_SCOPES:
            raise ConfigError(f"gate_scope must be one of {GATE_SCOPES}, got {self.gate_scope!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")


class NonFiniteLoss(FloatingPointError):
    pass


class Trainer:
    def __init__(self, model: MakerModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.use_ksl = model.flags.use_ksl
        self.optimizer = torch.optim.Adam(model.trainable_parameters(), lr=cfg.lr)
        self.state = EasinessState(cfg.lam0, cfg.growth)
        self.mask_gen = torch.Generator().manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.log: list[dict] = []
        self.skipped = 0

    def select(self, easiness_loss: np.ndarray) -> np.ndarray:
        if not self.use_ksl:
            return np.ones(len(easiness_loss), dtype=np.int64)
        v = easiness(easiness_loss, self.state.lam)
        if v.sum() == 0:
            v[int(np.argmin(easiness_loss))] = 1
        return v

    def objective(self, parts: dict[str, torch.Tensor], v: torch.Tensor) -> torch.Tensor:
        if self.cfg.gate_scope == "all":
            return (v * (parts["pred_mae"] + parts["easiness_loss"])).mean()
        return (parts["pred_mae"] + v * parts["easiness_loss"]).mean()

    def batch_step(self, batch: Batch) -> dict:
        self.model.train()
        out = self.model(batch, self.mask_gen)
        parts = per_sample_losses(out, batch, self.cfg.vel_weight, self.cfg.acc_weight)
        easy = parts["easiness_loss"].detach().cpu().double().numpy()
        lam = self.state.lam
        v = self.select(easy)
        total = self.objective(parts, torch.as_tensor(v, dtype=out.pred_positions.dtype))
        record = {
            "step": self.step,
            "lambda": lam,
            "selected_fraction": float(v.mean()),
            **{k: float(t.detach().mean()) for k, t in parts.items()},
            "total": float(total.detach()),
        }
        if self.cfg.log_per_sample:
            record["sample_easiness_loss"] = easy.tolist()
            record["v"] = v.tolist()
        if not math.isfinite(record["total"]):
            self.skipped += 1
            record["aborted"] = True
            record["diagnostics"] = {k: int((~torch.isfinite(t)).sum()) for k, t in parts.items()}
            log.error("non-finite loss at step %d: %s", self.step, record["diagnostics"])
            self.log.append(record)
            self.optimizer.zero_grad(set_to_none=True)
            return record
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        if self.use_ksl:
            self.state = advance_pace(self.state)
        self.state = replace(self.state, v=tuple(int(x) for x in v))
        self.step += 1
        self.log.append(record)
        return record

    def batches(self, data: Sequence[PreparedSample], dtype):
        order = self.rng.permutation(len(data))
        for start in range(0, len(order), self.cfg.batch_size):
            yield collate([data[i] for i in order[start : start + self.cfg.batch_size]], dtype)

    def fit(
        self,
        train: Sequence[PreparedSample],
        validate: Callable[[MakerModel], float] | None = None,
        epochs: int | None = None,
    ) -> dict | None:
        """Run the epochs; returns the state dict of the best validation epoch (if validating)."""
        if not train:
            raise ConfigError("training set is empty")
        dtype = next(self.model.parameters()).dtype
        best, best_state = math.inf, None
        for epoch in range(self.cfg.epochs if epochs is None else epochs):
            for batch in self.batches(train, dtype):
                self.batch_step(batch)
            if validate is not None:
                score = validate(self.model)
                self.log.append({"event": "validation", "epoch": epoch, "step": self.step, "val_mae_deg": score})
                if score < best:
                    best = score
                    best_state = {k: t.detach().clone() for k, t in self.model.state_dict().items()}
                    self.log[-1]["best"] = True
        return best_state

    def rng_state(self) -> dict:
        return {"numpy": self.rng.bit_generator.state, "mask": self.mask_gen.get_state().tolist()}
