"""Telemetry ingestion, lag flattening and z-score normalization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, EmptyTableError, OrderingError, SchemaError

DEFAULT_LAG = 3
DEFAULT_GAP_FACTOR = 10.0


@dataclass(frozen=True)
class Schema:
    state_names: tuple[str, ...]
    sensor_names: tuple[str, ...]

    def __init__(self, state_names: Sequence[str], sensor_names: Sequence[str]) -> None:
        object.__setattr__(self, "state_names", tuple(state_names))
        object.__setattr__(self, "sensor_names", tuple(sensor_names))
        overlap = set(self.state_names) & set(self.sensor_names)
        if overlap or "timestamp" in self.state_names + self.sensor_names:
            raise SchemaError(f"column names must be unique, clash on {sorted(overlap) or ['timestamp']}")

    @property
    def columns(self) -> tuple[str, ...]:
        return ("timestamp",) + self.state_names + self.sensor_names


@dataclass(frozen=True)
class TelemetryRecord:
    """One sample; ``None`` marks an absent (unmeasured or unparseable) value."""

    timestamp: int
    states: Mapping[str, float | None]
    sensors: Mapping[str, float | None]


def _parse_cell(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def check_order(records: Sequence[TelemetryRecord]) -> None:
    """Raise OrderingError at the first (1-based) record whose timestamp does not increase."""
    for i in range(1, len(records)):
        if records[i].timestamp <= records[i - 1].timestamp:
            raise OrderingError(
                i + 1,
                f"timestamp {records[i].timestamp} at row {i + 1} does not follow "
                f"{records[i - 1].timestamp}",
            )


def ingest_csv(path, schema: Schema) -> list[TelemetryRecord]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "timestamp" not in header:
            raise SchemaError(f"{path}: no 'timestamp' column")
        missing = [c for c in schema.state_names + schema.sensor_names if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        records = []
        for row_no, row in enumerate(reader, start=1):
            try:
                ts = int(row["timestamp"])
            except (TypeError, ValueError):
                raise SchemaError(f"{path}: row {row_no} has a non-integer timestamp {row['timestamp']!r}")
            records.append(
                TelemetryRecord(
                    timestamp=ts,
                    states={s: _parse_cell(row[s]) for s in schema.state_names},
                    sensors={s: _parse_cell(row[s]) for s in schema.sensor_names},
                )
            )
    check_order(records)
    return records


def format_value(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_csv(records: Iterable[TelemetryRecord], path, schema: Schema) -> None:
    """Write records in the ingest format; floats use ``repr`` so output is exact."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.columns)
        for r in records:
            w.writerow(
                [str(r.timestamp)]
                + [format_value(r.states.get(s)) for s in schema.state_names]
                + [format_value(r.sensors.get(s)) for s in schema.sensor_names]
            )


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        for a in (self.mean, self.std):
            a.setflags(write=False)

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def invert(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.n_features:
            raise DimensionError(f"expected {self.n_features} features, got {z.shape[-1]}")
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class FeatureTable:
    feature_names: tuple[str, ...]
    target_names: tuple[str, ...]
    rows: np.ndarray
    targets: np.ndarray
    lag: int
    state_names: tuple[str, ...] = ()
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    norm_stats: NormStats | None = None
    n_dropped: int = 0

    def __post_init__(self) -> None:
        for a in (self.rows, self.targets, self.timestamps):
            a.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def target(self, name: str) -> np.ndarray:
        if name not in self.target_names:
            raise SchemaError(f"unknown target {name!r}")
        return self.targets[:, self.target_names.index(name)]

    def take(self, idx) -> "FeatureTable":
        """Row subset (by index array or slice), keeping names and stats."""
        return replace(
            self,
            rows=self.rows[idx].copy(),
            targets=self.targets[idx].copy(),
            timestamps=self.timestamps[idx].copy() if len(self.timestamps) else self.timestamps,
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", *self.feature_names, *self.target_names])
            for i in range(self.n_rows):
                ts = str(int(self.timestamps[i])) if len(self.timestamps) else ""
                w.writerow([ts, *map(repr, self.rows[i].tolist()), *map(repr, self.targets[i].tolist())])


def lag_feature_names(state_names: Sequence[str], lag: int) -> tuple[str, ...]:
    return tuple(f"{s}_lag{k}" for k in range(lag + 1) for s in state_names)


def segment_bounds(timestamps: Sequence[int], max_gap: float | None = None) -> list[tuple[int, int]]:
    """Split positions into ``[start, end)`` runs where no inter-sample gap exceeds ``max_gap``.

    ``max_gap=None`` uses ten times the median interval.
    """
    n = len(timestamps)
    if n < 2:
        return [(0, n)] if n else []
    gaps = np.diff(np.asarray(timestamps, dtype=np.int64))
    if max_gap is None:
        max_gap = DEFAULT_GAP_FACTOR * float(np.median(gaps))
    bounds = []
    start = 0
    for i, g in enumerate(gaps, start=1):
        if g > max_gap:
            bounds.append((start, i))
            start = i
    bounds.append((start, n))
    return bounds


def flatten(
    records: Sequence[TelemetryRecord],
    lag: int = DEFAULT_LAG,
    targets: Sequence[str] = ("nox",),
    *,
    state_names: Sequence[str] | None = None,
    max_gap: float | None = None,
) -> FeatureTable:
    """Build the lagged feature table.

    Row ``i`` holds states at positions ``i, i-1, ..., i-lag`` (schema order
    within each block) and the target sensors at ``i``. Lags never reach
    across a gap larger than ``max_gap``. Rows with any absent state in the
    window or any absent target are dropped.
    """
    if lag < 0:
        raise ValueError("lag must be non-negative")
    if not records or lag >= len(records):
        raise EmptyTableError(f"need more than lag={lag} records, got {len(records)}")
    check_order(records)
    if state_names is None:
        state_names = tuple(records[0].states)
    state_names = tuple(state_names)
    targets = tuple(targets)
    for r in records:
        if set(r.states) != set(state_names):
            raise SchemaError(f"record at {r.timestamp} has states {sorted(r.states)}")
        unknown = [t for t in targets if t not in r.sensors]
        if unknown:
            raise SchemaError(f"unknown target sensors {unknown}")

    nan = float("nan")
    S = np.array(
        [[nan if r.states[s] is None else r.states[s] for s in state_names] for r in records],
        dtype=np.float64,
    )
    Y = np.array(
        [[nan if r.sensors[t] is None else r.sensors[t] for t in targets] for r in records],
        dtype=np.float64,
    )
    ts = np.array([r.timestamp for r in records], dtype=np.int64)

    blocks_X, blocks_Y, blocks_t = [], [], []
    for start, end in segment_bounds(ts, max_gap):
        if end - start <= lag:
            continue
        idx = np.arange(start + lag, end)
        blocks_X.append(np.hstack([S[idx - k] for k in range(lag + 1)]))
        blocks_Y.append(Y[idx])
        blocks_t.append(ts[idx])
    p = len(state_names) * (lag + 1)
    X = np.vstack(blocks_X) if blocks_X else np.zeros((0, p))
    T = np.vstack(blocks_Y) if blocks_Y else np.zeros((0, len(targets)))
    tt = np.concatenate(blocks_t) if blocks_t else np.zeros(0, dtype=np.int64)

    keep = ~(np.isnan(X).any(axis=1) | np.isnan(T).any(axis=1))
    if not keep.any():
        raise EmptyTableError("every row has an absent required value")
    return FeatureTable(
        feature_names=lag_feature_names(state_names, lag),
        target_names=targets,
        rows=X[keep],
        targets=T[keep],
        lag=lag,
        state_names=state_names,
        timestamps=tt[keep],
        n_dropped=int((~keep).sum()),
    )


def compute_stats(rows: np.ndarray) -> NormStats:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyTableError("cannot fit a normalizer on an empty table")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return NormStats(mean, std)


def fit_normalizer(table: FeatureTable) -> FeatureTable:
    """Z-score every feature column with population std; constant columns get std 1."""
    stats = compute_stats(table.rows)
    return replace(table, rows=stats.apply(table.rows), norm_stats=stats)


def apply_normalizer(stats: NormStats, raw_row) -> np.ndarray:
    raw_row = np.asarray(raw_row, dtype=np.float64)
    if raw_row.ndim != 1 or raw_row.shape[0] != stats.n_features:
        raise DimensionError(f"expected {stats.n_features} features, got shape {raw_row.shape}")
    return stats.apply(raw_row)


def denormalize(stats: NormStats, rows) -> np.ndarray:
    return stats.invert(rows)
