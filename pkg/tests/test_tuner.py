import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pyrosurrogate.errors import UndefinedMetricError
from pyrosurrogate.forest import HyperParams, fit_forest_arrays
from pyrosurrogate.telemetry import FeatureTable
from pyrosurrogate.tuner import (
    CVReport,
    default_grid,
    fold_seed,
    grid_search,
    kfold_splits,
    mse,
    r2,
    ranges_to_index,
    select_best,
)

from _oracles import py_derive_seed, r2_reference


def table_from(X, y):
    X = np.asarray(X, dtype=np.float64)
    return FeatureTable(
        feature_names=tuple(f"s{i}_lag0" for i in range(X.shape[1])),
        target_names=("y",),
        rows=X,
        targets=np.asarray(y, dtype=np.float64)[:, None],
        lag=0,
    )


def external_cv(X, y, grid, k, seed):
    """Mean fold MSE per combo recomputed with independent fold and metric code."""
    n = len(y)
    sizes = [n // k + (1 if j < n % k else 0) for j in range(k)]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    means = []
    for c, hyper in enumerate(grid):
        scores = []
        for j in range(k):
            a, b = edges[j], edges[j + 1]
            train = np.r_[0:a, b:n]
            mu = X[train].mean(axis=0)
            sd = X[train].std(axis=0)
            sd[sd == 0] = 1.0
            h = replace(hyper, seed=py_derive_seed(seed, c, j))
            model = fit_forest_arrays((X[train] - mu) / sd, y[train], h)
            pred = model.predict_many((X[a:b] - mu) / sd)
            scores.append(sum((float(p) - float(t)) ** 2 for p, t in zip(pred, y[a:b])) / (b - a))
        means.append(sum(scores) / k)
    return means


class TestMetrics:
    def test_mse_cases(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mse([0, 0], [1, 1]) == 1.0
        assert abs(mse([1, 2, 3], [1, 2, 2]) - 1 / 3) < 1e-12

    def test_r2_cases(self):
        assert r2([1, 2, 3], [1, 2, 3]) == 1.0
        assert r2([1, 2, 3], [2, 2, 2]) == 0.0
        assert abs(r2([1, 2, 3], [1, 2, 2]) - 0.5) < 1e-12

    def test_r2_constant_target(self):
        with pytest.raises(UndefinedMetricError):
            r2([5.0, 5.0, 5.0], [1.0, 2.0, 3.0])

    def test_length_checks(self):
        with pytest.raises(ValueError):
            mse([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            mse([], [])
        with pytest.raises(ValueError):
            r2([1.0], [1.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
           st.lists(st.floats(-1e3, 1e3), min_size=30, max_size=30))
    def test_r2_matches_exact_reference(self, y, noise):
        y = np.array(y)
        if np.ptp(y) < 1e-3:
            return
        yhat = y + np.array(noise[: len(y)])
        assert abs(r2(y, yhat) - r2_reference(y, yhat)) <= 1e-9 * max(1.0, abs(r2_reference(y, yhat)))


class TestFolds:
    def test_equal_blocks(self):
        folds = kfold_splits(100, 5)
        assert [v for _, v in folds] == [(0, 20), (20, 40), (40, 60), (60, 80), (80, 100)]
        assert folds[2][0] == [(0, 40), (60, 100)]

    def test_remainder_rule(self):
        sizes = [b - a for _, (a, b) in kfold_splits(10, 3)]
        assert sizes == [4, 3, 3]

    def test_edge_folds_have_single_train_range(self):
        folds = kfold_splits(10, 2)
        assert folds[0][0] == [(5, 10)]
        assert folds[1][0] == [(0, 5)]

    def test_invalid(self):
        with pytest.raises(ValueError):
            kfold_splits(3, 5)
        with pytest.raises(ValueError):
            kfold_splits(10, 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 20).flatmap(lambda k: st.tuples(st.just(k), st.integers(k, 500))))
    def test_partition_property(self, kn):
        k, n = kn
        folds = kfold_splits(n, k)
        seen = np.zeros(n, dtype=int)
        sizes = []
        for train, (a, b) in folds:
            seen[a:b] += 1
            sizes.append(b - a)
            tr = ranges_to_index(train)
            assert len(tr) + (b - a) == n
            assert not np.any((tr >= a) & (tr < b))
        assert np.all(seen == 1)
        assert max(sizes) - min(sizes) <= 1


class TestGrid:
    def test_default_grid(self):
        grid = default_grid()
        assert len(grid) == 60
        assert {h.n_estimators for h in grid} == {10, 25, 50, 75, 100}
        assert {h.min_samples_split for h in grid} == {2, 3, 4, 5}
        assert {h.min_samples_leaf for h in grid} == {1, 2, 3}
        assert (grid[0].n_estimators, grid[0].min_samples_split, grid[0].min_samples_leaf) == (10, 2, 1)
        assert (grid[1].min_samples_leaf, grid[3].min_samples_split) == (2, 3)

    def test_select_best_tie_breaking(self):
        grid = [HyperParams(n_estimators=n) for n in (50, 10, 10, 25)]
        assert select_best(grid, [1.0, 1.0, 1.0, 2.0]) == 1
        assert select_best(grid, [0.5, 1.0, 1.0, 2.0]) == 0
        assert select_best(grid, [3.0, 2.0, 2.0, 2.0]) == 1
        assert select_best(grid[:1], [7.0]) == 0

    def test_fold_seed_protocol(self):
        assert fold_seed(4, 2, 3) == py_derive_seed(4, 2, 3)


@pytest.fixture(scope="module")
def data():
    g = np.random.default_rng(77)
    X = g.uniform(-1, 1, size=(120, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + 0.05 * g.normal(size=120)
    return X, y


class TestGridSearch:
    def test_matches_external_recomputation(self, data):
        X, y = data
        grid = [HyperParams(n_estimators=5, min_samples_leaf=l) for l in (1, 3)]
        rep = grid_search(table_from(X, y), "y", grid, k=4, seed=9)
        ext = external_cv(X, y, grid, 4, 9)
        for a, b in zip(rep.mean_mse, ext):
            assert abs(a - b) <= 1e-12
        for c in range(len(grid)):
            assert rep.mean_mse[c] == pytest.approx(np.mean(rep.fold_mse[c]), abs=1e-15)
        assert rep.best_index == min(range(2), key=lambda i: (ext[i], grid[i].n_estimators, i))

    def test_single_combo_is_best(self, data):
        X, y = data
        rep = grid_search(table_from(X, y), "y", [HyperParams(n_estimators=3)], k=3)
        assert rep.best_index == 0
        assert rep.best == HyperParams(n_estimators=3)

    def test_step_function_prefers_unlimited_depth(self):
        x = np.linspace(0, 1, 90)
        y = np.floor(4 * x)
        grid = [HyperParams(n_estimators=5, max_depth=1), HyperParams(n_estimators=5)]
        rep = grid_search(table_from(x[:, None], y), "y", grid, k=3, seed=1)
        ext = external_cv(x[:, None], y, grid, 3, 1)
        assert ext[1] < ext[0]
        assert rep.best_index == 1

    def test_best_is_minimal(self, data):
        X, y = data
        grid = [HyperParams(n_estimators=n, min_samples_split=s) for n in (3, 6) for s in (2, 5)]
        rep = grid_search(table_from(X, y), "y", grid, k=3)
        assert all(rep.mean_mse[rep.best_index] <= m for m in rep.mean_mse)

    def test_deterministic(self, data):
        X, y = data
        grid = [HyperParams(n_estimators=4)]
        a = grid_search(table_from(X, y), "y", grid, k=3, seed=2)
        b = grid_search(table_from(X, y), "y", grid, k=3, seed=2)
        assert a.to_dict() == b.to_dict()

    def test_validation_rows_unseen(self, data, monkeypatch):
        X, y = data
        import pyrosurrogate.tuner as tuner

        seen = []
        real = tuner.fit_forest_arrays

        def spy(Xtr, ytr, hyper, **kw):
            seen.append({float(v) for v in ytr})
            return real(Xtr, ytr, hyper, **kw)

        monkeypatch.setattr(tuner, "fit_forest_arrays", spy)
        rep = grid_search(table_from(X, y), "y", [HyperParams(n_estimators=2)], k=4)
        for train_targets, (a, b) in zip(seen, rep.fold_boundaries):
            assert train_targets.isdisjoint({float(v) for v in y[a:b]})

    def test_json_export(self, data, tmp_path):
        X, y = data
        rep = grid_search(table_from(X, y), "y", [HyperParams(n_estimators=2), HyperParams(n_estimators=3)], k=3)
        p = tmp_path / "cv.json"
        rep.write_json(p)
        d = json.loads(p.read_text())
        for key in ("grid", "fold_mse", "mean_mse", "best", "fold_boundaries"):
            assert key in d
        assert d["best"] == rep.best_index
        assert len(d["fold_mse"][0]) == 3
        back = CVReport.from_dict(d)
        assert back.mean_mse == rep.mean_mse and back.grid == rep.grid

    def test_empty_grid(self, data):
        X, y = data
        with pytest.raises(ValueError):
            grid_search(table_from(X, y), "y", [], k=3)
