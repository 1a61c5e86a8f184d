"""Emulated on-device loop: serve a model, retrain a depth-capped forest on a
rolling window at a fixed simulated cadence, swap it in, log everything."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmptyTableError, FitError, UndefinedMetricError
from .forest import ForestModel, HyperParams, fit_forest
from .rng import derive_seed
from .telemetry import TelemetryRecord, fit_normalizer, flatten
from .tuner import r2

EDGE_MAX_DEPTH = 2
DEFAULT_PERIOD = 7200
DEFAULT_WINDOW = 1440  # 24 h of 60 s samples


@dataclass(frozen=True)
class EdgeConfig:
    warm_model: ForestModel
    retrain_period: int = DEFAULT_PERIOD
    window: int = DEFAULT_WINDOW
    edge_hyper: HyperParams = HyperParams(n_estimators=20, max_depth=EDGE_MAX_DEPTH)
    allow_deeper: bool = False

    def __post_init__(self) -> None:
        if self.retrain_period <= 0:
            raise ValueError("retrain_period must be positive")
        if self.window < 1:
            raise ValueError("window must hold at least one record")
        if self.edge_hyper.max_depth != EDGE_MAX_DEPTH and not self.allow_deeper:
            raise ValueError("edge models are capped at depth 2; pass allow_deeper=True to override")

    @property
    def target(self) -> str:
        return self.warm_model.target_name

    @property
    def state_names(self) -> tuple[str, ...]:
        p = self.warm_model.n_features // (self.warm_model.lag + 1)
        return tuple(n.rsplit("_lag", 1)[0] for n in self.warm_model.feature_names[:p])


@dataclass(frozen=True)
class LogEntry:
    timestamp: int
    model_id: int
    prediction: float | None
    actual: float | None
    event: str = ""


@dataclass(frozen=True)
class RetrainEvent:
    retrain_id: int
    tick: int
    window_first: int | None
    window_last: int | None
    n_records: int
    n_rows: int
    skipped: bool
    reason: str = ""


@dataclass
class EdgeLog:
    entries: list[LogEntry] = field(default_factory=list)
    retrains: list[RetrainEvent] = field(default_factory=list)
    models: dict[int, ForestModel] = field(default_factory=dict)
    max_retained: int = 0

    @property
    def predictions(self) -> list[LogEntry]:
        return [e for e in self.entries if e.event == ""]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "model_id", "prediction", "actual", "event"])
            for e in self.entries:
                w.writerow([
                    e.timestamp,
                    e.model_id,
                    "" if e.prediction is None else repr(e.prediction),
                    "" if e.actual is None else repr(e.actual),
                    e.event,
                ])


def _retrain(config: EdgeConfig, records: list[TelemetryRecord], retrain_id: int):
    model = config.warm_model
    table = flatten(records, model.lag, [config.target], state_names=config.state_names)
    table = fit_normalizer(table)
    hyper = replace(config.edge_hyper, seed=derive_seed(config.edge_hyper.seed, retrain_id))
    return fit_forest(table, config.target, hyper), table.n_rows


def run_edge(config: EdgeConfig, stream: Iterable[TelemetryRecord], duration: int) -> EdgeLog:
    """Replay ``stream`` on a simulated clock for ``duration`` seconds.

    Time is measured from the first record. Each record is appended to the
    window, then every due retrain tick (``p, 2p, ...`` up to ``duration``)
    fires, then the record is scored with the active model. Ticks left over
    when the stream ends early fire on the final window.
    """
    log = EdgeLog()
    active_id, active = 0, config.warm_model
    log.models[0] = active
    lag = active.lag
    window: deque[TelemetryRecord] = deque(maxlen=config.window)
    recent: deque[TelemetryRecord] = deque(maxlen=lag + 1)
    period = config.retrain_period
    next_tick = period
    retrain_id = 0
    t0 = None

    def fire(tick_abs: int) -> None:
        nonlocal active_id, active, retrain_id
        retrain_id += 1
        recs = list(window)
        first = recs[0].timestamp if recs else None
        last = recs[-1].timestamp if recs else None
        try:
            if not recs:
                raise EmptyTableError("window is empty")
            model, n_rows = _retrain(config, recs, retrain_id)
        except (EmptyTableError, FitError) as exc:
            log.retrains.append(RetrainEvent(retrain_id, tick_abs, first, last, len(recs), 0, True, str(exc)))
            log.entries.append(LogEntry(tick_abs, active_id, None, None, "skip"))
            return
        # swap only once the new model is complete
        active_id, active = retrain_id, model
        log.models[retrain_id] = model
        log.retrains.append(RetrainEvent(retrain_id, tick_abs, first, last, len(recs), n_rows, False))
        log.entries.append(LogEntry(tick_abs, active_id, None, None, "retrain"))

    for rec in stream:
        if t0 is None:
            t0 = rec.timestamp
        elapsed = rec.timestamp - t0
        if elapsed > duration:
            break
        window.append(rec)
        recent.append(rec)
        log.max_retained = max(log.max_retained, len(window))
        while next_tick <= elapsed:
            fire(t0 + next_tick)
            next_tick += period

        pred = None
        if len(recent) == lag + 1:
            # feature block k holds the states k samples back
            vals = [recent[-1 - k].states[s] for k in range(lag + 1) for s in config.state_names]
            if all(v is not None for v in vals):
                row = np.array(vals, dtype=np.float64)
                if active.norm_stats is not None:
                    row = active.norm_stats.apply(row)
                pred = float(active.predict_many(row[None, :])[0])
        log.entries.append(LogEntry(rec.timestamp, active_id, pred, rec.sensors.get(config.target)))

    if t0 is not None:
        while next_tick <= duration:
            fire(t0 + next_tick)
            next_tick += period
    return log


@dataclass(frozen=True)
class SegmentScore:
    retrain_id: int
    r2: float | None
    n: int
    reason: str = ""


@dataclass
class RollingReport:
    segments: list[SegmentScore]
    reason: str = ""


def rolling_score(log: EdgeLog, horizon: int | None = None) -> RollingReport:
    """R² of predictions against actuals per model segment.

    ``horizon`` limits each segment to its first ``horizon`` scored records.
    Segments whose actuals are constant (or fewer than two) are reported with
    ``r2=None`` and a reason.
    """
    pairs: dict[int, list[tuple[float, float]]] = {}
    order: list[int] = []
    any_actual = False
    for e in log.predictions:
        if e.actual is not None:
            any_actual = True
        if e.model_id not in pairs:
            pairs[e.model_id] = []
            order.append(e.model_id)
        if e.prediction is None or e.actual is None:
            continue
        if horizon is not None and len(pairs[e.model_id]) >= horizon:
            continue
        pairs[e.model_id].append((e.prediction, e.actual))
    if not any_actual:
        return RollingReport([], "log contains no actuals")

    out = []
    for mid in order:
        seg = pairs[mid]
        if len(seg) < 2:
            out.append(SegmentScore(mid, None, len(seg), "fewer than two scored records"))
            continue
        p, a = np.array(seg).T
        try:
            out.append(SegmentScore(mid, r2(a, p), len(seg)))
        except UndefinedMetricError:
            out.append(SegmentScore(mid, None, len(seg), "constant actuals"))
    return RollingReport(out)
