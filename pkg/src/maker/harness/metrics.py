"""Horizon-banded and difficulty-stratified MAE."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..batching import PreparedSample
from ..kinematics import Level, quartile_levels, sample_irregularity, spatial_complexity

# 1-based inclusive horizon steps
BANDS: dict[str, tuple[int, int]] = {"1-6": (1, 6), "7-12": (7, 12), "13-24": (13, 24), "1-24": (1, 24)}
PART_BANDS = ("1-6", "7-12", "13-24")
AXES = ("spatial", "temporal")


@dataclass
class MetricsReport:
    mae_deg: dict[str, float]
    mae_norm: dict[str, float]
    band_counts: dict[str, int]  # sample-steps per band
    n_samples: int
    strata: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mae_deg": self.mae_deg,
            "mae_norm": self.mae_norm,
            "band_counts": self.band_counts,
            "n_samples": self.n_samples,
            "strata": self.strata,
        }

    def write(self, directory: str | Path, stem: str = "metrics") -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = directory / f"{stem}.json"
        out.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with (directory / f"{stem}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["band", "mae_deg", "mae_norm", "count"])
            for band in BANDS:
                if band in self.mae_deg:
                    w.writerow([band, self.mae_deg[band], self.mae_norm[band], self.band_counts[band]])
        return out


def step_errors(pred_norm: np.ndarray, items: Sequence[PreparedSample]) -> tuple[np.ndarray, np.ndarray]:
    """Per (sample, step) absolute error averaged over lon/lat, in normalized units and degrees."""
    target = np.stack([it.fut_norm for it in items])
    scale = np.stack([it.stats.scale[:2] for it in items])[:, None, :]
    diff = np.abs(np.asarray(pred_norm, dtype=np.float64) - target)
    return diff.mean(-1), (diff * scale).mean(-1)


def band_report(err_norm: np.ndarray, err_deg: np.ndarray) -> MetricsReport:
    n, p = err_deg.shape
    mae_deg, mae_norm, counts = {}, {}, {}
    for name, (lo, hi) in BANDS.items():
        hi = min(hi, p)
        if lo > hi:
            continue
        mae_deg[name] = float(err_deg[:, lo - 1 : hi].mean())
        mae_norm[name] = float(err_norm[:, lo - 1 : hi].mean())
        counts[name] = n * (hi - lo + 1)
    return MetricsReport(mae_deg, mae_norm, counts, n)


def evaluate_predictions(pred_norm: np.ndarray, items: Sequence[PreparedSample]) -> MetricsReport:
    if len(items) == 0:
        raise ValueError("cannot evaluate an empty split")
    return band_report(*step_errors(pred_norm, items))


def degrees_to_norm(pred_deg: np.ndarray, items: Sequence[PreparedSample]) -> np.ndarray:
    mean = np.stack([it.stats.mean[:2] for it in items])[:, None, :]
    scale = np.stack([it.stats.scale[:2] for it in items])[:, None, :]
    return (np.asarray(pred_deg) - mean) / scale


def band_identity_gap(report: MetricsReport) -> float:
    """|count-weighted mean of the partial bands - band 1-24|, for both unit systems."""
    parts = [b for b in PART_BANDS if b in report.mae_deg]
    total = sum(report.band_counts[b] for b in parts)
    gaps = []
    for mae in (report.mae_deg, report.mae_norm):
        weighted = sum(report.band_counts[b] * mae[b] for b in parts) / total
        gaps.append(abs(weighted - mae["1-24"]))
    return max(gaps)


def difficulty_scores(items: Sequence[PreparedSample]) -> dict[str, np.ndarray]:
    spatial = np.array([spatial_complexity(it.sample.all_positions) for it in items])
    temporal = np.array(
        [sample_irregularity(it.sample.history_timestamps, it.sample.future_timestamps) for it in items]
    )
    return {"spatial": spatial, "temporal": temporal}


def stratify(err_deg: np.ndarray, items: Sequence[PreparedSample]) -> dict[str, dict[str, dict[str, float]]]:
    """MAE (degrees, horizon 1-24) and sample count per axis and quartile level."""
    if len(items) < 4:
        raise ValueError("stratified evaluation needs at least 4 samples")
    per_sample = err_deg.mean(axis=1)
    out = {}
    for axis, scores in difficulty_scores(items).items():
        levels = np.array([lv.value for lv in quartile_levels(scores)])
        cells = {}
        for lv in Level:
            sel = levels == lv.value
            count = int(sel.sum())
            cells[lv.value] = {"mae_deg": float(per_sample[sel].mean()) if count else None, "count": count}
        out[axis] = cells
    return out
