"""AIS ingestion, trajectory segmentation, windowing and instance normalization.

Records flow through the pipeline as immutable values:

    parse_ais_csv -> segment_trajectories -> window_samples -> instance_normalize

Each record carries the two position channels (lon, lat) and the two auxiliary
feature channels (SOG, COG), in that order.  ``CHANNELS`` fixes the column order
of every feature matrix produced here.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, PreconditionError, ShapeError

CHANNELS = ("lon", "lat", "sog", "cog")
NORM_EPS = 1e-5

# canonical field -> source column, per dialect
DIALECTS: dict[str, dict[str, str]] = {
    "us_coast": {
        "vessel_id": "MMSI",
        "timestamp": "BaseDateTime",
        "lat": "LAT",
        "lon": "LON",
        "sog": "SOG",
        "cog": "COG",
    },
    "danish": {
        "vessel_id": "MMSI",
        "timestamp": "# Timestamp",
        "lat": "Latitude",
        "lon": "Longitude",
        "sog": "SOG",
        "cog": "COG",
    },
}

# the Danish Maritime Authority export writes day-first timestamps
_FALLBACK_TIME_FORMATS = ("%d/%m/%Y %H:%M:%S", "%Y-%m-%d %H:%M:%S")


@dataclass(frozen=True, order=True)
class AisRecord:
    vessel_id: str
    timestamp: int
    lon: float
    lat: float
    sog: float
    cog: float

    def is_valid(self) -> bool:
        return (
            -90.0 <= self.lat <= 90.0
            and -180.0 <= self.lon <= 180.0
            and self.sog >= 0.0
            and 0.0 <= self.cog < 360.0
            and all(math.isfinite(x) for x in (self.lon, self.lat, self.sog, self.cog))
        )

    def features(self) -> tuple[float, float, float, float]:
        return (self.lon, self.lat, self.sog, self.cog)


@dataclass(frozen=True)
class Trajectory:
    vessel_id: str
    records: tuple[AisRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records], dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(r.lon, r.lat) for r in self.records], dtype=np.float64).reshape(-1, 2)

    @property
    def features(self) -> np.ndarray:
        return np.array([r.features() for r in self.records], dtype=np.float64).reshape(-1, 4)


@dataclass(frozen=True, eq=False)
class TrajectorySample:
    """One (history, future) training instance cut from a trajectory."""

    history: tuple[AisRecord, ...]
    future_positions: np.ndarray  # (p, 2) lon, lat
    future_timestamps: np.ndarray  # (p,) int seconds

    @property
    def h(self) -> int:
        return len(self.history)

    @property
    def p(self) -> int:
        return len(self.future_timestamps)

    @property
    def vessel_id(self) -> str:
        return self.history[0].vessel_id

    @property
    def history_features(self) -> np.ndarray:
        return np.array([r.features() for r in self.history], dtype=np.float64)

    @property
    def history_positions(self) -> np.ndarray:
        return self.history_features[:, :2]

    @property
    def history_timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.history], dtype=np.int64)

    @property
    def all_timestamps(self) -> np.ndarray:
        return np.concatenate([self.history_timestamps, self.future_timestamps])

    @property
    def all_positions(self) -> np.ndarray:
        return np.concatenate([self.history_positions, self.future_positions])

    def with_future_positions(self, positions: np.ndarray) -> "TrajectorySample":
        return TrajectorySample(self.history, np.asarray(positions, dtype=np.float64), self.future_timestamps)


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray  # (channels,)
    std: np.ndarray  # (channels,)
    eps: float = NORM_EPS

    @property
    def scale(self) -> np.ndarray:
        return self.std + self.eps


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------


def parse_timestamp(text: str) -> int:
    """Parse an AIS timestamp as integer UTC epoch seconds."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError:
        for fmt in _FALLBACK_TIME_FORMATS:
            try:
                dt = datetime.strptime(text, fmt)
                break
            except ValueError:
                continue
        else:
            raise
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def parse_ais_csv(path: str | Path, dialect: str) -> tuple[list[AisRecord], int]:
    """Read one AIS CSV export into canonical records.

    Returns the records sorted by (vessel_id, timestamp) and the number of
    rows dropped for bad coordinates, non-numeric fields or unparseable
    timestamps.
    """
    if dialect not in DIALECTS:
        raise ConfigError(f"unknown AIS dialect {dialect!r}; expected one of {sorted(DIALECTS)}")
    columns = DIALECTS[dialect]
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"AIS file not found: {path}")

    records: list[AisRecord] = []
    dropped = 0
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], 0
        header = [name.strip() for name in reader.fieldnames]
        reader.fieldnames = header
        for canonical, source in columns.items():
            if source not in header:
                raise ConfigError(f"missing required column {source!r} for {dialect} dialect ({canonical})")
        for row in reader:
            try:
                rec = AisRecord(
                    vessel_id=row[columns["vessel_id"]].strip(),
                    timestamp=parse_timestamp(row[columns["timestamp"]]),
                    lon=float(row[columns["lon"]]),
                    lat=float(row[columns["lat"]]),
                    sog=float(row[columns["sog"]]),
                    cog=float(row[columns["cog"]]),
                )
            except (TypeError, ValueError, AttributeError):
                dropped += 1
                continue
            if not rec.vessel_id or not rec.is_valid():
                dropped += 1
                continue
            records.append(rec)
    records.sort(key=lambda r: (r.vessel_id, r.timestamp))
    return records, dropped


# --------------------------------------------------------------------------
# segmentation and windowing
# --------------------------------------------------------------------------


def segment_trajectories(
    records: Sequence[AisRecord], min_interval: float, max_gap: float | None = None
) -> list[Trajectory]:
    """Split per-vessel record streams into trajectories.

    A record closer than ``min_interval`` seconds to the last kept record is
    dropped (the earlier one survives).  A gap larger than ``max_gap`` starts
    a new trajectory.  ``max_gap`` defaults to ten times ``min_interval``.
    """
    if max_gap is None:
        max_gap = 10 * min_interval
    if min_interval >= max_gap:
        raise ConfigError(f"min_interval ({min_interval}) must be smaller than max_gap ({max_gap})")
    keys = [(r.vessel_id, r.timestamp) for r in records]
    if any(a > b for a, b in zip(keys, keys[1:])):
        raise PreconditionError("records must be sorted by (vessel_id, timestamp)")

    out: list[Trajectory] = []
    for vessel_id, group in groupby(records, key=lambda r: r.vessel_id):
        current: list[AisRecord] = []
        for rec in group:
            if current:
                gap = rec.timestamp - current[-1].timestamp
                if gap < min_interval:
                    continue
                if gap > max_gap:
                    out.append(Trajectory(vessel_id, tuple(current)))
                    current = []
            current.append(rec)
        if current:
            out.append(Trajectory(vessel_id, tuple(current)))
    return out


def window_count(length: int, h: int, p: int, stride: int = 1) -> int:
    return max(0, (length - h - p) // stride + 1)


def window_samples(traj: Trajectory, h: int = 24, p: int = 24, stride: int = 1) -> list[TrajectorySample]:
    if h < 1 or p < 1 or stride < 1:
        raise ConfigError(f"h, p and stride must be >= 1 (got h={h}, p={p}, stride={stride})")
    recs = traj.records
    samples = []
    for start in range(0, len(recs) - h - p + 1, stride):
        future = recs[start + h : start + h + p]
        samples.append(
            TrajectorySample(
                history=recs[start : start + h],
                future_positions=np.array([(r.lon, r.lat) for r in future], dtype=np.float64),
                future_timestamps=np.array([r.timestamp for r in future], dtype=np.int64),
            )
        )
    return samples


# --------------------------------------------------------------------------
# instance normalization
# --------------------------------------------------------------------------


def instance_normalize(history: np.ndarray, eps: float = NORM_EPS) -> tuple[np.ndarray, NormStats]:
    """Per-channel standardization of one history window (population std)."""
    x = np.asarray(history, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise PreconditionError(f"history must be (h >= 2, channels), got shape {x.shape}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    stats = NormStats(mean=mean, std=std, eps=eps)
    return (x - mean) / stats.scale, stats


def denormalize(pred: np.ndarray, stats: NormStats) -> np.ndarray:
    """Map normalized (..., 2) lon/lat predictions back to degrees."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[-1] != 2:
        raise ShapeError(f"expected trailing lon/lat dimension of size 2, got shape {pred.shape}")
    return pred * stats.scale[:2] + stats.mean[:2]


def denormalize_channels(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Inverse of ``instance_normalize`` over all channels."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != stats.mean.shape[0]:
        raise ShapeError(f"channel mismatch: {x.shape[-1]} vs {stats.mean.shape[0]}")
    return x * stats.scale + stats.mean


# --------------------------------------------------------------------------
# synthetic trajectories
# --------------------------------------------------------------------------

SYNTH_KINDS = ("straight", "loop", "zigzag", "mixed")
_EPOCH0 = 1703462400  # 2023-12-25T00:00:00Z
_MPS_TO_KNOTS = 3600.0 / 1852.0


@dataclass(frozen=True)
class IntervalModel:
    """Sampling-interval generator for synthetic tracks."""

    kind: str = "regular"
    delta: float = 60.0
    sigma: float = 0.0
    gap_prob: float = 0.1
    gap_factor: float = 6.0

    @classmethod
    def regular(cls, delta: float = 60.0) -> "IntervalModel":
        return cls("regular", delta)

    @classmethod
    def jittered(cls, delta: float = 60.0, sigma: float = 15.0) -> "IntervalModel":
        return cls("jittered", delta, sigma)

    @classmethod
    def bursty(cls, delta: float = 60.0, gap_prob: float = 0.1, gap_factor: float = 6.0) -> "IntervalModel":
        return cls("bursty", delta, 0.0, gap_prob, gap_factor)

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.kind == "regular":
            dt = np.full(count, self.delta)
        elif self.kind == "jittered":
            dt = self.delta + self.sigma * rng.standard_normal(count)
        elif self.kind == "bursty":
            short = rng.uniform(0.5, 1.5, count) * self.delta
            long = rng.uniform(2.0, self.gap_factor, count) * self.delta
            dt = np.where(rng.random(count) < self.gap_prob, long, short)
        else:
            raise ConfigError(f"unknown interval model {self.kind!r}")
        return np.maximum(np.rint(dt), 1.0).astype(np.int64)

    @classmethod
    def parse(cls, text: str) -> "IntervalModel":
        """Parse ``regular:60``, ``jittered:60,15`` or ``bursty`` style strings."""
        name, _, args = text.partition(":")
        values = [float(a) for a in args.split(",") if a.strip()]
        factories = {"regular": cls.regular, "jittered": cls.jittered, "bursty": cls.bursty}
        if name not in factories:
            raise ConfigError(f"unknown interval model {name!r}")
        return factories[name](*values)


def _rotate(heading_deg: float) -> np.ndarray:
    # unit vector (east, north) for a compass heading
    rad = math.radians(heading_deg)
    return np.array([math.sin(rad), math.cos(rad)])


def _straight_path(t: np.ndarray, rng: np.random.Generator, heading_deg: float | None) -> np.ndarray:
    speed = rng.uniform(5e-5, 1e-4)  # deg/s, roughly 5-11 m/s
    heading = 0.0 if heading_deg is None else heading_deg
    return np.outer(t - t[0], speed * _rotate(heading))


def _circle_path(t: np.ndarray, rng: np.random.Generator, radius_deg: float, period: float) -> np.ndarray:
    phase0 = rng.uniform(0, 2 * math.pi)
    direction = 1.0 if rng.random() < 0.5 else -1.0
    angle = phase0 + direction * 2 * math.pi * (t - t[0]) / period
    circle = radius_deg * np.column_stack([np.cos(angle), np.sin(angle)])
    return circle - circle[0]


def _loop_path(t: np.ndarray, rng: np.random.Generator, radius_deg: float) -> np.ndarray:
    # one full circuit over the sampled time span
    return _circle_path(t, rng, radius_deg, max(float(t[-1] - t[0]), 1.0))


def _zigzag_path(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # legs alternate +-45 degrees off a base course, with a different speed on each tack
    base = rng.uniform(0, 360)
    leg_seconds = rng.uniform(240, 720)
    speeds = rng.uniform(3e-5, 1.2e-4, 2)
    dt = np.diff(t).astype(np.float64)
    tack = (((t[:-1] - t[0]) // leg_seconds) % 2).astype(int)
    heading = base + np.where(tack == 0, 45.0, -45.0)
    unit = np.column_stack([np.sin(np.radians(heading)), np.cos(np.radians(heading))])
    steps = (speeds[tack] * dt)[:, None] * unit
    return np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])


def _mixed_path(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # one pattern per track, with randomized geometry
    pattern = rng.choice(["straight", "loop", "zigzag"])
    if pattern == "straight":
        return _straight_path(t, rng, rng.uniform(0, 360))
    if pattern == "loop":
        return _circle_path(t, rng, rng.uniform(0.01, 0.03), rng.uniform(1800, 5400))
    return _zigzag_path(t, rng)


def synth_trajectory(
    kind: str,
    n: int,
    noise_deg: float = 0.0,
    seed: int = 0,
    interval_model: IntervalModel | None = None,
    *,
    heading_deg: float | None = None,
    radius_deg: float = 0.01,
    vessel_id: str | None = None,
) -> Trajectory:
    """Generate a deterministic synthetic vessel track.

    ``straight`` moves with a constant lon/lat velocity, heading due north
    unless ``heading_deg`` is given.  ``loop`` closes one circle of
    ``radius_deg`` over the sampled time span.  ``zigzag`` alternates +-45
    degree legs of fixed duration with a different speed on each tack.
    ``mixed`` picks one of those patterns per track with randomized heading,
    radius, period, leg duration and speeds.  Gaussian noise of ``noise_deg`` is added to the
    positions; SOG/COG are derived from the noise-free motion.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown trajectory kind {kind!r}; expected one of {SYNTH_KINDS}")
    if n < 2:
        raise PreconditionError("synthetic trajectories need n >= 2")
    interval_model = interval_model or IntervalModel.regular()
    rng = np.random.default_rng(seed)

    t0 = _EPOCH0 + int(rng.integers(0, 86400))
    t = np.concatenate([[t0], t0 + np.cumsum(interval_model.draw(rng, n - 1))]).astype(np.int64)
    origin = np.array([rng.uniform(-80.0, -60.0), rng.uniform(30.0, 45.0)])

    if kind == "straight":
        rel = _straight_path(t, rng, heading_deg)
    elif kind == "loop":
        rel = _loop_path(t, rng, radius_deg)
    elif kind == "zigzag":
        rel = _zigzag_path(t, rng)
    else:
        rel = _mixed_path(t, rng)
    clean = origin + rel

    sog, cog = _speed_course(clean, t)
    pos = clean + noise_deg * rng.standard_normal(clean.shape) if noise_deg > 0 else clean
    vid = vessel_id or f"SYN{kind[:3].upper()}{seed:06d}"
    records = tuple(
        AisRecord(vid, int(ti), float(lon), float(lat), float(s), float(c))
        for ti, (lon, lat), s, c in zip(t, pos, sog, cog)
    )
    return Trajectory(vid, records)


def _speed_course(pos: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    from .kinematics import haversine_m

    n = len(pos)
    sog = np.zeros(n)
    cog = np.zeros(n)
    for i in range(n):
        a, b = (i, i + 1) if i < n - 1 else (i - 1, i)
        dist = haversine_m(pos[a], pos[b])
        sog[i] = dist / (t[b] - t[a]) * _MPS_TO_KNOTS
        dlon = (pos[b, 0] - pos[a, 0]) * math.cos(math.radians(pos[a, 1]))
        dlat = pos[b, 1] - pos[a, 1]
        cog[i] = math.degrees(math.atan2(dlon, dlat)) % 360.0 if dist > 0 else 0.0
    # guard the open upper bound against 360.0 from rounding
    cog = np.where(cog >= 360.0, 0.0, cog)
    return sog, cog


def synth_dataset(
    count: int,
    n: int,
    kind: str = "mixed",
    noise_deg: float = 0.0,
    seed: int = 0,
    interval_model: IntervalModel | None = None,
) -> list[Trajectory]:
    """``count`` independent tracks with per-track seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [
        synth_trajectory(kind, n, noise_deg, int(s), interval_model, vessel_id=f"SYN{seed:04d}{i:05d}")
        for i, s in enumerate(seeds)
    ]


# --------------------------------------------------------------------------
# canonical trajectory store (newline-delimited JSON)
# --------------------------------------------------------------------------

STORE_FIELDS = ("vessel_id", "timestamp", "lon", "lat", "sog", "cog", "segment")


def write_store(trajectories: Iterable[Trajectory], path: str | Path) -> Path:
    """Write trajectories as one JSON object per record.

    ``segment`` numbers the trajectories of a vessel in order so a vessel
    split by long gaps reads back as the same trajectories.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seen: dict[str, int] = {}
    with path.open("w", encoding="utf-8") as fh:
        for traj in trajectories:
            seg = seen.get(traj.vessel_id, -1) + 1
            seen[traj.vessel_id] = seg
            for r in traj.records:
                row = dict(
                    vessel_id=r.vessel_id, timestamp=r.timestamp, lon=r.lon, lat=r.lat, sog=r.sog, cog=r.cog,
                    segment=seg,
                )
                fh.write(json.dumps(row) + "\n")
    return path


def read_store(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"trajectory store not found: {path}")
    groups: dict[tuple[str, int], list[AisRecord]] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            rec = AisRecord(
                str(row["vessel_id"]), int(row["timestamp"]), float(row["lon"]), float(row["lat"]),
                float(row["sog"]), float(row["cog"]),
            )
            groups.setdefault((rec.vessel_id, int(row.get("segment", 0))), []).append(rec)
    return [
        Trajectory(vid, tuple(sorted(recs, key=lambda r: r.timestamp)))
        for (vid, _), recs in sorted(groups.items(), key=lambda kv: kv[0])
    ]
