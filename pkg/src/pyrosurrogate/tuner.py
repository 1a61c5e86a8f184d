"""Regression metrics and contiguous k-fold grid search."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import FitError, UndefinedMetricError
from .forest import HyperParams, fit_forest_arrays
from .rng import derive_seed
from .telemetry import FeatureTable, compute_stats

DEFAULT_N_ESTIMATORS = (10, 25, 50, 75, 100)
DEFAULT_MIN_SAMPLES_SPLIT = (2, 3, 4, 5)
DEFAULT_MIN_SAMPLES_LEAF = (1, 2, 3)


def _pair(y, yhat, min_len: int):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.ndim != 1 or y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if len(y) < min_len:
        raise ValueError(f"need at least {min_len} values")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat, 1)
    return float(np.mean((y - yhat) ** 2))


def r2(y, yhat) -> float:
    """Coefficient of determination; raises on constant ``y`` instead of returning NaN."""
    y, yhat = _pair(y, yhat, 2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R² is undefined for constant targets")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def kfold_splits(n_rows: int, k: int) -> list[tuple[list[tuple[int, int]], tuple[int, int]]]:
    """Contiguous folds: ``(train_ranges, validation_range)`` per fold.

    The first ``n_rows % k`` blocks get one extra row.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if n_rows < k:
        raise ValueError(f"cannot split {n_rows} rows into {k} folds")
    base, extra = divmod(n_rows, k)
    out = []
    start = 0
    for j in range(k):
        end = start + base + (1 if j < extra else 0)
        train = [r for r in ((0, start), (end, n_rows)) if r[1] > r[0]]
        out.append((train, (start, end)))
        start = end
    return out


def ranges_to_index(ranges: Sequence[tuple[int, int]]) -> np.ndarray:
    if not ranges:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(a, b) for a, b in ranges])


def default_grid(base: HyperParams | None = None) -> list[HyperParams]:
    """60 combos: n_estimators x min_samples_split x min_samples_leaf, in that nesting order."""
    base = base or HyperParams()
    return [
        replace(base, n_estimators=n, min_samples_split=s, min_samples_leaf=l)
        for n, s, l in itertools.product(
            DEFAULT_N_ESTIMATORS, DEFAULT_MIN_SAMPLES_SPLIT, DEFAULT_MIN_SAMPLES_LEAF
        )
    ]


@dataclass
class CVReport:
    target: str
    k: int
    seed: int
    grid: list[HyperParams]
    fold_mse: list[list[float]]
    mean_mse: list[float]
    best_index: int
    fold_boundaries: list[tuple[int, int]]

    @property
    def best(self) -> HyperParams:
        return self.grid[self.best_index]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "k": self.k,
            "seed": self.seed,
            "grid": [h.to_dict() for h in self.grid],
            "fold_mse": self.fold_mse,
            "mean_mse": self.mean_mse,
            "best": self.best_index,
            "fold_boundaries": [list(b) for b in self.fold_boundaries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CVReport":
        return cls(
            target=d["target"],
            k=d["k"],
            seed=d["seed"],
            grid=[HyperParams.from_dict(h) for h in d["grid"]],
            fold_mse=[list(map(float, f)) for f in d["fold_mse"]],
            mean_mse=list(map(float, d["mean_mse"])),
            best_index=int(d["best"]),
            fold_boundaries=[tuple(b) for b in d["fold_boundaries"]],
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def select_best(grid: Sequence[HyperParams], mean_mse: Sequence[float]) -> int:
    """Lowest mean MSE; ties go to fewer estimators, then the earlier grid entry."""
    return min(range(len(grid)), key=lambda i: (mean_mse[i], grid[i].n_estimators, i))


def fold_seed(base_seed: int, combo: int, fold: int) -> int:
    return derive_seed(base_seed, combo, fold)


def grid_search(
    table: FeatureTable,
    target: str,
    grid: Sequence[HyperParams] | None = None,
    k: int = 5,
    *,
    seed: int = 0,
    progress: Callable[[int, int], None] | None = None,
) -> CVReport:
    """Cross-validated MSE for every combo on raw (un-normalized) ``table``.

    Each fold refits the normalizer on its training rows only. The forest seed
    for combo ``c`` and fold ``j`` is ``derive_seed(seed, c, j)``; the combo's
    own ``seed`` field is ignored.
    """
    grid = list(grid) if grid is not None else default_grid()
    if not grid:
        raise ValueError("grid must not be empty")
    y_all = table.target(target)
    splits = kfold_splits(table.n_rows, k)

    folds = []
    for train_ranges, (a, b) in splits:
        tr = ranges_to_index(train_ranges)
        stats = compute_stats(table.rows[tr])
        folds.append((stats.apply(table.rows[tr]), y_all[tr], stats.apply(table.rows[a:b]), y_all[a:b]))

    fold_mse: list[list[float]] = []
    total = len(grid) * k
    done = 0
    for c, hyper in enumerate(grid):
        scores = []
        for j, (Xtr, ytr, Xva, yva) in enumerate(folds):
            h = replace(hyper, seed=fold_seed(seed, c, j))
            try:
                model = fit_forest_arrays(Xtr, ytr, h, target_name=target)
            except FitError as exc:
                raise FitError(f"combo {c} fold {j}: {exc}") from exc
            scores.append(mse(yva, model.predict_many(Xva)))
            done += 1
            if progress is not None:
                progress(done, total)
        fold_mse.append(scores)
    mean_mse = [float(np.mean(s)) for s in fold_mse]
    return CVReport(
        target=target,
        k=k,
        seed=seed,
        grid=grid,
        fold_mse=fold_mse,
        mean_mse=mean_mse,
        best_index=select_best(grid, mean_mse),
        fold_boundaries=[v for _, v in splits],
    )
