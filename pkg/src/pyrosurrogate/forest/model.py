from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import DimensionError, FitError, SchemaError
from ..rng import derive_seed, new_state
from . import _kernels as K

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class HyperParams:
    n_estimators: int = 100
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_depth: int | None = None
    features_per_split: int | None = None  # None -> max(1, n_features // 3)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive or None")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be positive")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def resolve_mtry(self, n_features: int) -> int:
        k = self.features_per_split
        if k is None:
            return max(1, n_features // 3)
        if k > n_features:
            raise FitError(f"features_per_split={k} exceeds n_features={n_features}")
        return k

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "max_depth": self.max_depth,
            "features_per_split": self.features_per_split,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class Tree:
    """Preorder node arrays of one fitted tree (see ``_kernels`` for layout)."""

    kind: np.ndarray
    feature: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.kind)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for j in range(self.n_nodes):
            if self.kind[j] == K.INTERNAL:
                depths[self.left[j]] = depths[j] + 1
                depths[self.right[j]] = depths[j] + 1
        return int(depths.max())

    def leaves(self) -> list[int]:
        return [j for j in range(self.n_nodes) if self.kind[j] == K.LEAF]


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    hyper: HyperParams
    feature_names: tuple[str, ...]
    target_name: str
    norm_stats: object | None = None  # telemetry.NormStats
    train_fingerprint: str = ""
    lag: int = 0
    bootstrap: bool = True
    _flat: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.trees) != self.hyper.n_estimators:
            raise ValueError("tree count must equal n_estimators")
        sizes = [t.n_nodes for t in self.trees]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        flat = (
            np.concatenate([t.kind for t in self.trees]),
            np.concatenate([t.feature for t in self.trees]),
            np.concatenate([t.value for t in self.trees]),
            np.concatenate([t.left for t in self.trees]),
            np.concatenate([t.right for t in self.trees]),
            offsets,
        )
        object.__setattr__(self, "_flat", flat)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_many(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(
                f"expected rows of length {self.n_features}, got shape {X.shape}"
            )
        return K.predict_batch(*self._flat, X)

    def fingerprint(self) -> str:
        from .io import serialize

        return hashlib.sha256(serialize(self)).hexdigest()


def fingerprint_matrix(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<f8").tobytes())
    return h.hexdigest()


def _check_xy(rows, y):
    X = np.ascontiguousarray(rows, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise FitError("cannot fit on an empty matrix")
    if y.shape != (X.shape[0],):
        raise FitError(f"target length {y.shape} does not match {X.shape[0]} rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise FitError("training data must be finite")
    return X, y


def _grow(Xt, y, w, order, hyper: HyperParams, state) -> Tree:
    mtry = hyper.resolve_mtry(Xt.shape[0])
    max_depth = -1 if hyper.max_depth is None else hyper.max_depth
    arrays = K.grow(
        Xt, y, w, order, mtry,
        float(hyper.min_samples_split), float(hyper.min_samples_leaf),
        max_depth, state,
    )
    return Tree(*arrays)


def fit_tree(rows, y, hyper: HyperParams, tree_seed: int) -> Tree:
    """Fit one CART regression tree on all rows with unit weights.

    ``tree_seed`` seeds the per-node feature-subset draws.
    """
    X, y = _check_xy(rows, y)
    Xt = np.ascontiguousarray(X.T)
    w = np.ones(len(y))
    return _grow(Xt, y, w, K.presort(Xt), hyper, new_state(tree_seed))


def fit_forest_arrays(
    X,
    y,
    hyper: HyperParams,
    *,
    feature_names: Sequence[str] | None = None,
    target_name: str = "y",
    norm_stats=None,
    lag: int = 0,
    bootstrap: bool = True,
) -> ForestModel:
    """Bagged forest on a raw matrix.

    Tree ``t`` uses seed ``derive_seed(hyper.seed, t)``. Its generator first
    draws the ``n`` bootstrap indices, then continues into the node
    feature-subset draws, so the whole tree is a function of that one seed.
    """
    X, y = _check_xy(X, y)
    hyper = replace(hyper, features_per_split=hyper.resolve_mtry(X.shape[1]))
    n = len(y)
    Xt = np.ascontiguousarray(X.T)
    order = K.presort(Xt)
    trees = []
    for t in range(hyper.n_estimators):
        state = new_state(derive_seed(hyper.seed, t))
        if bootstrap:
            w = K.bootstrap_counts(state, n)
            tree_order = K.restrict_order(order, w)
        else:
            w = np.ones(n)
            tree_order = order
        trees.append(_grow(Xt, y, w, tree_order, hyper, state))
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X.shape[1])]
    return ForestModel(
        trees=tuple(trees),
        hyper=hyper,
        feature_names=tuple(feature_names),
        target_name=target_name,
        norm_stats=norm_stats,
        train_fingerprint=fingerprint_matrix(X, y),
        lag=lag,
        bootstrap=bootstrap,
    )


def fit_forest(table, target: str, hyper: HyperParams, *, bootstrap: bool = True) -> ForestModel:
    """Fit one forest for ``target`` on a (normalized) FeatureTable."""
    if target not in table.target_names:
        raise SchemaError(f"unknown target {target!r}; table has {list(table.target_names)}")
    if table.n_rows == 0:
        raise FitError("cannot fit on an empty table")
    y = table.targets[:, table.target_names.index(target)]
    return fit_forest_arrays(
        table.rows,
        y,
        hyper,
        feature_names=table.feature_names,
        target_name=target,
        norm_stats=table.norm_stats,
        lag=table.lag,
        bootstrap=bootstrap,
    )


def predict(model: ForestModel, row) -> float:
    """Prediction for one already-normalized feature vector."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.n_features:
        raise DimensionError(
            f"expected a vector of length {model.n_features}, got shape {row.shape}"
        )
    return float(model.predict_many(row[None, :])[0])


def predict_tree(tree: Tree, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    offsets = np.array([0, tree.n_nodes], dtype=np.int64)
    return K.predict_batch(tree.kind, tree.feature, tree.value, tree.left, tree.right, offsets, X)
