"""Telemetry to labelled training sequences.

Pipeline per modem: drop out-of-range and far-from-site records, forward-fill
short gaps on the sampling grid (longer gaps split the series), block-mean
downsample by N, cut windows of L downsampled records, then label windows
that overlap the lag-shifted interval before each restart action.

Feature rows of every window, in order: CPE slot indicator, RSRP, SINR,
RSRQ, latency.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import ConfigError, SchemaError
from .telemetry import (
    LATENCY_RANGE, RSRP_RANGE, RSRQ_RANGE, SINR_RANGE,
    ActionRecord, ModemSample, SiteTopology, modem_slot, nearest_site_km_array,
)

logger = logging.getLogger(__name__)

N_FEATURES = 5
FEATURE_NAMES = ("wan_slot", "rsrp", "sinr", "rsrq", "latency")
# column order of the raw per-record feature matrix inside a Segment
RAW_COLUMNS = ("rsrp", "sinr", "rsrq", "latency")


@dataclass(frozen=True)
class PreprocessConfig:
    n_downsample: int = 2
    seq_len: int = 6
    label_lag: int = 600
    label_window: int = 300
    max_gap_fill: int = 6
    geo_cutoff_km: float = 30.0
    sample_interval: int = 5
    exclusion_margin: int = 0
    rsrp_range: tuple[float, float] = RSRP_RANGE
    sinr_range: tuple[float, float] = SINR_RANGE
    rsrq_range: tuple[float, float] = RSRQ_RANGE
    latency_range: tuple[float, float] = LATENCY_RANGE

    def validate(self) -> "PreprocessConfig":
        if self.n_downsample < 1:
            raise ConfigError("preprocess.n_downsample must be >= 1", field="preprocess.n_downsample")
        if self.seq_len < 1:
            raise ConfigError("preprocess.seq_len must be >= 1", field="preprocess.seq_len")
        if self.label_lag < 0:
            raise ConfigError("preprocess.label_lag must be >= 0", field="preprocess.label_lag")
        if self.label_window < 0:
            raise ConfigError("preprocess.label_window must be >= 0", field="preprocess.label_window")
        if self.max_gap_fill < 0:
            raise ConfigError("preprocess.max_gap_fill must be >= 0", field="preprocess.max_gap_fill")
        if self.sample_interval <= 0:
            raise ConfigError("preprocess.sample_interval must be > 0", field="preprocess.sample_interval")
        if self.exclusion_margin < 0:
            raise ConfigError("preprocess.exclusion_margin must be >= 0", field="preprocess.exclusion_margin")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "PreprocessConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"preprocess.{key}: unknown field", field=f"preprocess.{key}")
            default = getattr(cls(), key)
            try:
                if isinstance(default, tuple):
                    lo, hi = value
                    value = (float(lo), float(hi))
                elif isinstance(default, int):
                    if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                        raise ValueError("expected an integer")
                    value = int(value)
                else:
                    value = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"preprocess.{key}: {exc}", field=f"preprocess.{key}") from None
            kwargs[key] = value
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


@dataclass
class Segment:
    """Gap-free run of records on the sampling grid for one modem."""

    wan_id: str
    times: np.ndarray      # int64, strictly increasing by a constant step
    values: np.ndarray     # (n, 4) float64, columns RAW_COLUMNS
    synthetic: np.ndarray  # bool, True for forward-filled records

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class CleanResult:
    segments: list[Segment]
    rejections: Counter = field(default_factory=Counter)

    @property
    def n_synthetic(self) -> int:
        return int(sum(s.synthetic.sum() for s in self.segments))


@dataclass
class Windows:
    """Batch of feature windows from one segment."""

    wan_id: str
    features: np.ndarray  # (m, 5, L)
    t_start: np.ndarray
    t_end: np.ndarray

    def __len__(self) -> int:
        return len(self.t_start)


@dataclass
class TrainingSequence:
    features: np.ndarray  # (5, L)
    label: int            # 0 = action needed, 1 = normal
    wan_id: str
    t_start: int
    t_end: int

    def to_dict(self) -> dict:
        return {
            "wan_id": self.wan_id,
            "t_start": int(self.t_start),
            "t_end": int(self.t_end),
            "label": int(self.label),
            "features": self.features.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingSequence":
        feats = np.asarray(d["features"], dtype=float)
        if feats.ndim != 2 or feats.shape[0] != N_FEATURES:
            raise SchemaError(f"sequence features must be {N_FEATURES} x L, got {feats.shape}")
        if int(d["label"]) not in (0, 1):
            raise SchemaError(f"label must be 0 or 1, got {d['label']!r}")
        return cls(feats, int(d["label"]), str(d["wan_id"]), int(d["t_start"]), int(d["t_end"]))


# --------------------------------------------------------------------------- clean


def _as_arrays(samples: Sequence[ModemSample]):
    times = np.fromiter((s.time for s in samples), dtype=np.int64, count=len(samples))
    vals = np.array([(s.rsrp, s.sinr, s.rsrq, s.latency) for s in samples], dtype=float).reshape(-1, 4)
    lat = np.fromiter((s.latitude for s in samples), dtype=float, count=len(samples))
    lon = np.fromiter((s.longitude for s in samples), dtype=float, count=len(samples))
    return times, vals, lat, lon


def rejection_reasons(vals: np.ndarray, lat: np.ndarray, lon: np.ndarray,
                      topology: SiteTopology | None, cfg: PreprocessConfig) -> np.ndarray:
    """Per-record rejection reason ('' for accepted). Range checks win over geo."""
    reasons = np.full(len(vals), "", dtype=object)
    checks = (
        ("range:rsrp", vals[:, 0], cfg.rsrp_range, False),
        ("range:sinr", vals[:, 1], cfg.sinr_range, False),
        ("range:rsrq", vals[:, 2], cfg.rsrq_range, False),
        ("range:latency", vals[:, 3], cfg.latency_range, True),
    )
    for name, col, (lo, hi), open_low in checks:
        ok = (col > lo) if open_low else (col >= lo)
        ok &= col <= hi
        reasons[(reasons == "") & ~ok] = name
    if topology is not None and len(vals):
        bad_coord = (np.abs(lat) > 90) | (np.abs(lon) > 180)
        d = nearest_site_km_array(np.where(bad_coord, 0.0, lat), np.where(bad_coord, 0.0, lon), topology)
        far = bad_coord | (d > cfg.geo_cutoff_km)
        reasons[(reasons == "") & far] = "geo"
    return reasons


def clean(samples: Sequence[ModemSample], cfg: PreprocessConfig,
          topology: SiteTopology | None = None) -> CleanResult:
    """Clean one modem's time-ordered series into gap-free segments.

    Gaps of up to ``max_gap_fill`` missing ticks are filled by repeating the
    last accepted record; longer gaps start a new segment.
    """
    cfg.validate()
    if not samples:
        return CleanResult([], Counter())
    wan_id = samples[0].wan_id
    times, vals, lat, lon = _as_arrays(samples)
    reasons = rejection_reasons(vals, lat, lon, topology, cfg)
    rejections = Counter(r for r in reasons if r)
    keep = reasons == ""
    times, vals = times[keep], vals[keep]
    if len(times) == 0:
        return CleanResult([], rejections)

    dt = cfg.sample_interval
    steps = np.maximum(np.rint(np.diff(times) / dt).astype(np.int64), 1)
    missing = steps - 1
    split_at = np.flatnonzero(missing > cfg.max_gap_fill) + 1
    segments = []
    for idx in np.split(np.arange(len(times)), split_at):
        seg_missing = missing[idx[:-1]] if len(idx) > 1 else np.empty(0, dtype=np.int64)
        reps = np.append(seg_missing + 1, 1)
        seg_vals = np.repeat(vals[idx], reps, axis=0)
        t0 = times[idx[0]]
        seg_times = t0 + dt * np.arange(len(seg_vals), dtype=np.int64)
        synthetic = np.ones(len(seg_vals), dtype=bool)
        synthetic[np.concatenate(([0], np.cumsum(reps)[:-1]))] = False
        segments.append(Segment(wan_id, seg_times, seg_vals, synthetic))
    return CleanResult(segments, rejections)


# --------------------------------------------------------------------------- downsample / assemble


def block_mean(block: np.ndarray) -> np.ndarray:
    """Arithmetic mean over axis -2; shared by the offline and streaming paths."""
    return block.sum(axis=-2) / block.shape[-2]


def downsample(segment: Segment, n: int) -> Segment:
    if n < 1:
        raise ConfigError("n_downsample must be >= 1", field="preprocess.n_downsample")
    if n == 1:
        return segment
    m = len(segment) // n
    vals = block_mean(segment.values[: m * n].reshape(m, n, segment.values.shape[1]))
    return Segment(
        segment.wan_id,
        segment.times[: m * n : n].copy(),
        vals,
        segment.synthetic[: m * n].reshape(m, n).all(axis=1),
    )


def feature_rows(values: np.ndarray, slot: int) -> np.ndarray:
    """(k, 4) raw columns -> (5, k) feature matrix with the slot indicator on row 0."""
    out = np.empty((N_FEATURES, len(values)))
    out[0] = float(slot)
    out[1:] = values.T
    return out


def assemble(segment: Segment, seq_len: int, mode: Literal["training", "inference"] = "training") -> Windows:
    """Cut a downsampled segment into 5 x L windows.

    Training mode tiles non-overlapping windows; inference mode slides with stride 1.
    """
    L = seq_len
    n = len(segment)
    if mode == "training":
        starts = np.arange(0, (n // L) * L, L)
    elif mode == "inference":
        starts = np.arange(0, max(0, n - L + 1))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    slot = modem_slot(segment.wan_id)
    feats = feature_rows(segment.values, slot)  # (5, n)
    if len(starts):
        idx = starts[:, None] + np.arange(L)[None, :]
        windows = feats[:, idx].transpose(1, 0, 2).copy()
    else:
        windows = np.empty((0, N_FEATURES, L))
    return Windows(segment.wan_id, windows, segment.times[starts], segment.times[starts + L - 1])


# --------------------------------------------------------------------------- label / split


def label(windows: Iterable[Windows], actions: Sequence[ActionRecord], cfg: PreprocessConfig,
          known_wans: Iterable[str] | None = None) -> list[TrainingSequence]:
    """Label windows 0 when they overlap [t_a - lag, t_a - lag + window] of an action on the same modem."""
    windows = list(windows)
    wans = set(known_wans) if known_wans is not None else {w.wan_id for w in windows}
    by_wan: dict[str, list[int]] = {}
    for a in actions:
        if a.wan_id not in wans:
            logger.warning("action on unknown wan_id %r at %d ignored", a.wan_id, a.time)
            continue
        by_wan.setdefault(a.wan_id, []).append(a.time)

    out: list[TrainingSequence] = []
    for win in windows:
        labels = np.ones(len(win), dtype=np.int64)
        keep = np.ones(len(win), dtype=bool)
        for t_a in by_wan.get(win.wan_id, ()):
            anchor = t_a - cfg.label_lag
            hit = (win.t_end >= anchor) & (win.t_start <= anchor + cfg.label_window)
            labels[hit] = 0
            if cfg.exclusion_margin:
                keep &= ~((win.t_end >= anchor - cfg.exclusion_margin) & (win.t_end < anchor))
        keep |= labels == 0
        for i in np.flatnonzero(keep):
            out.append(TrainingSequence(win.features[i], int(labels[i]), win.wan_id,
                                        int(win.t_start[i]), int(win.t_end[i])))
    out.sort(key=lambda s: (s.wan_id, s.t_start))
    return out


def split(sequences: Sequence[TrainingSequence], ratio: float = 0.8, seed: int = 0
          ) -> tuple[list[TrainingSequence], list[TrainingSequence]]:
    """Seeded, stratified shuffle split."""
    n = len(sequences)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}; validation set would be empty")
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in sequences])
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        logger.warning("dataset has a single class (%s); weighted sampling will degenerate", classes)
    n_train = min(max(int(round(ratio * n)), 1), n - 1)
    train_idx, val_idx = [], []
    for k, c in enumerate(classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        # the last class absorbs rounding so the total matches ratio * n
        take = n_train - len(train_idx) if k == len(classes) - 1 else int(round(ratio * len(idx)))
        if len(idx) > 1:
            take = min(max(take, 1), len(idx) - 1)
        take = min(max(take, 0), len(idx))
        train_idx.extend(idx[:take].tolist())
        val_idx.extend(idx[take:].tolist())
    train_idx = np.array(train_idx, dtype=np.int64)
    val_idx = np.array(val_idx, dtype=np.int64)
    rng.shuffle(train_idx)
    rng.shuffle(val_idx)
    return [sequences[i] for i in train_idx], [sequences[i] for i in val_idx]


def stack(sequences: Sequence[TrainingSequence]) -> tuple[np.ndarray, np.ndarray]:
    if not sequences:
        return np.empty((0, N_FEATURES, 0)), np.empty(0)
    X = np.stack([s.features for s in sequences])
    y = np.array([s.label for s in sequences], dtype=float)
    return X, y


# --------------------------------------------------------------------------- whole-dataset pipeline


@dataclass
class PreprocessOutput:
    windows: list[Windows]
    rejections: Counter
    n_records: int
    n_synthetic: int
    n_segments: int


def windows_for(partitions: dict[str, Sequence[ModemSample]], cfg: PreprocessConfig,
                topology: SiteTopology | None, mode: Literal["training", "inference"] = "training"
                ) -> PreprocessOutput:
    cfg.validate()
    windows, rejections = [], Counter()
    n_records = n_synth = n_seg = 0
    for wan_id in sorted(partitions):
        series = partitions[wan_id]
        n_records += len(series)
        res = clean(series, cfg, topology)
        rejections.update(res.rejections)
        n_synth += res.n_synthetic
        n_seg += len(res.segments)
        for seg in res.segments:
            w = assemble(downsample(seg, cfg.n_downsample), cfg.seq_len, mode)
            if len(w):
                windows.append(w)
    return PreprocessOutput(windows, rejections, n_records, n_synth, n_seg)


def save_sequences(path: str | Path, sequences: Iterable[TrainingSequence]) -> int:
    n = 0
    with open(path, "w") as fh:
        for s in sequences:
            fh.write(json.dumps(s.to_dict()) + "\n")
            n += 1
    return n


def load_sequences(path: str | Path) -> list[TrainingSequence]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(TrainingSequence.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: bad sequence: {exc}") from None
    return out


def save_rejections(path: str | Path, rejections: Counter) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["reason", "count"])
        for reason in sorted(rejections):
            w.writerow([reason, rejections[reason]])
