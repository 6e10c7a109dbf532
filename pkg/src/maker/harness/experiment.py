"""Training runs, checkpoints, evaluation and the ablation matrix.

A run directory holds::

    config.yaml         resolved configuration
    config_hash         16 hex chars identifying the configuration
    seed
    train_log.jsonl     one JSON object per optimizer step / validation pass
    checkpoint.pt       weights at the end of training
    checkpoint_best.pt  weights at the best validation epoch
    metrics.json/.csv   test-split report of the best checkpoint
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..batching import PreparedSample, collate, prepare_samples
from ..data import IntervalModel, Trajectory, read_store, synth_dataset, window_samples
from ..errors import ConfigError
from ..forecaster import MakerModel, constant_velocity_baseline, init_model, variant_flags
from ..ksl import Trainer
from ..prompt_lm import FrozenLMProvider, load_provider
from .config import ExperimentConfig, save_config
from .metrics import MetricsReport, degrees_to_norm, evaluate_predictions, step_errors, stratify

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "maker-checkpoint"
CHECKPOINT_VERSION = 1
SPLITS = ("train", "val", "test")


def load_trajectories(cfg: ExperimentConfig) -> list[Trajectory]:
    if cfg.data_path:
        return read_store(cfg.data_path)
    return synth_dataset(
        cfg.synth_count, cfg.synth_n, cfg.synth_kind, cfg.synth_noise, cfg.seed,
        IntervalModel.parse(cfg.synth_interval),
    )


def split_trajectories(trajs: Sequence[Trajectory], cfg: ExperimentConfig) -> dict[str, list[Trajectory]]:
    """Seeded split by whole trajectory, so windows never leak across splits."""
    order = np.random.default_rng(cfg.seed).permutation(len(trajs))
    n_train = int(round(cfg.split_train * len(trajs)))
    n_val = int(round(cfg.split_val * len(trajs)))
    parts = np.split(order, [n_train, n_train + n_val])
    return {name: [trajs[i] for i in idx] for name, idx in zip(SPLITS, parts)}


def provider_for(cfg: ExperimentConfig) -> FrozenLMProvider:
    return load_provider(cfg.lm_provider, seed=cfg.seed)


def build_datasets(cfg: ExperimentConfig, provider: FrozenLMProvider) -> dict[str, list[PreparedSample]]:
    splits = split_trajectories(load_trajectories(cfg), cfg)
    out = {}
    for name, trajs in splits.items():
        samples = [s for t in trajs for s in window_samples(t, cfg.h, cfg.p, cfg.stride)]
        out[name] = prepare_samples(samples, provider, cfg.dataset_name)
    return out


def torch_dtype(cfg: ExperimentConfig):
    return torch.float64 if cfg.dtype == "float64" else torch.float32


def build_model(cfg: ExperimentConfig, provider: FrozenLMProvider) -> MakerModel:
    return init_model(cfg.seed, cfg.model_config(), cfg.flags, provider.word_embeddings, torch_dtype(cfg))


@torch.no_grad()
def predict(model: MakerModel, items: Sequence[PreparedSample], batch_size: int = 256) -> np.ndarray:
    """Normalized (N, p, 2) predictions, masking off."""
    model.eval()
    dtype = next(model.parameters()).dtype
    preds = []
    for start in range(0, len(items), batch_size):
        out = model(collate(items[start : start + batch_size], dtype), masking=False)
        preds.append(out.pred_positions.double().numpy())
    return np.concatenate(preds) if preds else np.zeros((0, 0, 2))


def evaluate_model(model: MakerModel, items: Sequence[PreparedSample], batch_size: int = 256) -> MetricsReport:
    if not items:
        raise ConfigError("cannot evaluate an empty split")
    pred = predict(model, items, batch_size)
    report = evaluate_predictions(pred, items)
    if len(items) >= 4:
        report.strata = stratify(step_errors(pred, items)[1], items)
    return report


def baseline_report(items: Sequence[PreparedSample]) -> MetricsReport:
    pred_deg = np.stack([constant_velocity_baseline(it.sample) for it in items])
    return evaluate_predictions(degrees_to_norm(pred_deg, items), items)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: MakerModel, cfg: ExperimentConfig, trainer: Trainer | None = None,
                    state_dict: dict | None = None) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "state_dict": state_dict if state_dict is not None else model.state_dict(),
        "step": trainer.step if trainer else 0,
        "lambda": trainer.state.lam if trainer else cfg.lam0,
        "rng_state": trainer.rng_state() if trainer else None,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path, provider: FrozenLMProvider | None = None):
    """Rebuild (model, config, provider) from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path} is not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT}")
    cfg = ExperimentConfig.from_dict(payload["config"])
    provider = provider or provider_for(cfg)
    model = build_model(cfg, provider)
    model.load_state_dict(payload["state_dict"])
    return model, cfg, provider


# --------------------------------------------------------------------------
# runs
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    run_dir: Path
    model: MakerModel
    trainer: Trainer
    test_report: MetricsReport
    final_val_mae: float | None


def train_run(
    cfg: ExperimentConfig,
    run_dir: str | Path,
    datasets: dict[str, list[PreparedSample]] | None = None,
    provider: FrozenLMProvider | None = None,
) -> RunResult:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    provider = provider or provider_for(cfg)
    datasets = datasets or build_datasets(cfg, provider)
    if not datasets["train"]:
        raise ConfigError("training split is empty; need longer or more trajectories")

    save_config(cfg, run_dir / "config.yaml")
    (run_dir / "config_hash").write_text(cfg.hash() + "\n")
    (run_dir / "seed").write_text(f"{cfg.seed}\n")

    model = build_model(cfg, provider)
    trainer = Trainer(model, cfg.train_config())
    val = datasets["val"]

    def validate(m: MakerModel) -> float:
        return evaluate_model(m, val, cfg.eval_batch_size).mae_deg["1-24"]

    best_state = trainer.fit(datasets["train"], validate if val else None)
    with (run_dir / "train_log.jsonl").open("w") as fh:
        for rec in trainer.log:
            fh.write(json.dumps(rec) + "\n")
    save_checkpoint(run_dir / "checkpoint.pt", model, cfg, trainer)
    final_val = next((r["val_mae_deg"] for r in reversed(trainer.log) if r.get("event") == "validation"), None)

    if best_state is not None:
        save_checkpoint(run_dir / "checkpoint_best.pt", model, cfg, trainer, best_state)
        model.load_state_dict(best_state)
    else:
        save_checkpoint(run_dir / "checkpoint_best.pt", model, cfg, trainer)
    test = datasets["test"] or val
    report = evaluate_model(model, test, cfg.eval_batch_size)
    report.write(run_dir, "metrics")
    baseline_report(test).write(run_dir, "baseline_metrics")
    return RunResult(run_dir, model, trainer, report, final_val)


def evaluate_checkpoint(checkpoint: str | Path, split: str = "test") -> MetricsReport:
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    model, cfg, provider = load_checkpoint(checkpoint)
    items = build_datasets(cfg, provider)[split]
    if not items:
        raise ConfigError(f"split {split!r} is empty")
    return evaluate_model(model, items, cfg.eval_batch_size)


def read_log(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ablation_matrix(
    cfg: ExperimentConfig, variants: Sequence[str], out_dir: str | Path
) -> dict[str, MetricsReport]:
    """Train and evaluate each named variant on the same data and seed."""
    flags = {name: variant_flags(name) for name in variants}  # fail before any training
    out_dir = Path(out_dir)
    provider = provider_for(cfg)
    datasets = build_datasets(cfg, provider)
    rows = {}
    for name, fl in flags.items():
        result = train_run(cfg.with_flags(fl), out_dir / name, datasets, provider)
        rows[name] = result.test_report
    write_ablation(rows, out_dir)
    return rows


def write_ablation(rows: dict[str, MetricsReport], out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(
        json.dumps({k: v.to_dict() for k, v in rows.items()}, indent=2, sort_keys=True)
    )
    bands = ["1-6", "7-12", "13-24", "1-24"]
    lines = ["variant," + ",".join(f"mae_deg_{b}" for b in bands) + "," + ",".join(f"mae_norm_{b}" for b in bands)]
    for name, rep in rows.items():
        vals = [rep.mae_deg.get(b, math.nan) for b in bands] + [rep.mae_norm.get(b, math.nan) for b in bands]
        lines.append(name + "," + ",".join(repr(v) for v in vals))
    path = out_dir / "ablation.csv"
    path.write_text("\n".join(lines) + "\n")
    return path
