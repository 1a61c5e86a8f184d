import csv
from dataclasses import replace

import numpy as np
import pytest

from pyrosurrogate import plantsim
from pyrosurrogate.edge import EdgeConfig, EdgeLog, LogEntry, rolling_score, run_edge
from pyrosurrogate.forest import HyperParams
from pyrosurrogate.rng import derive_seed
from pyrosurrogate.tuner import r2

HOUR = 3600


@pytest.fixture(scope="module")
def stream():
    config = replace(plantsim.default_config(), seed=31)
    return plantsim.generate_dataset(config, 6 * 60 + 1)


@pytest.fixture(scope="module")
def six_hours(small_models, stream):
    config = EdgeConfig(small_models["nox"], retrain_period=2 * HOUR, window=120,
                        edge_hyper=HyperParams(n_estimators=5, max_depth=2))
    return run_edge(config, stream, 6 * HOUR)


class TestSchedule:
    def test_three_retrains_in_six_hours(self, six_hours, stream):
        t0 = stream[0].timestamp
        assert [r.tick - t0 for r in six_hours.retrains] == [2 * HOUR, 4 * HOUR, 6 * HOUR]
        assert not any(r.skipped for r in six_hours.retrains)
        assert [r.retrain_id for r in six_hours.retrains] == [1, 2, 3]

    def test_depth_cap(self, six_hours):
        for mid, model in six_hours.models.items():
            if mid == 0:
                continue
            assert all(t.depth() <= 2 for t in model.trees)
            assert model.hyper.n_estimators == 5

    def test_retrain_seed_derivation(self, six_hours):
        for mid, model in six_hours.models.items():
            if mid:
                assert model.hyper.seed == derive_seed(0, mid)

    def test_window_bound(self, six_hours):
        assert six_hours.max_retained <= 120
        assert all(r.n_records <= 120 for r in six_hours.retrains)

    def test_deeper_requires_override(self, small_models):
        with pytest.raises(ValueError):
            EdgeConfig(small_models["nox"], edge_hyper=HyperParams(max_depth=3))
        EdgeConfig(small_models["nox"], edge_hyper=HyperParams(max_depth=3), allow_deeper=True)
        with pytest.raises(ValueError):
            EdgeConfig(small_models["nox"], retrain_period=0)

    def test_final_window_contents(self, small_models, stream):
        recs = stream[:250]
        period = recs[-1].timestamp - recs[0].timestamp
        config = EdgeConfig(small_models["nox"], retrain_period=period, window=100,
                            edge_hyper=HyperParams(n_estimators=2, max_depth=2))
        log = run_edge(config, recs, period)
        last = log.retrains[-1]
        assert (last.window_first, last.window_last) == (recs[150].timestamp, recs[249].timestamp)
        assert last.n_records == 100


class TestLog:
    def test_every_record_logged_once(self, six_hours, stream):
        preds = six_hours.predictions
        assert [e.timestamp for e in preds] == [r.timestamp for r in stream]

    def test_swap_is_atomic(self, six_hours):
        ids = [e.model_id for e in six_hours.entries]
        assert ids == sorted(ids)
        # each model id serves one contiguous run of predictions
        runs = [k for i, k in enumerate(ids) if i == 0 or k != ids[i - 1]]
        assert runs == sorted(set(runs))

    def test_warm_up_predictions(self, six_hours):
        # first lag records cannot be scored
        preds = six_hours.predictions
        assert all(e.prediction is None for e in preds[:3])
        assert all(e.prediction is not None for e in preds[3:])
        assert all(e.model_id == 0 for e in preds[: 2 * 60])

    def test_csv_export(self, six_hours, tmp_path):
        p = tmp_path / "log.csv"
        six_hours.write_csv(p)
        rows = list(csv.DictReader(p.open()))
        assert list(rows[0]) == ["timestamp", "model_id", "prediction", "actual", "event"]
        assert sum(r["event"] == "retrain" for r in rows) == 3
        assert len(rows) == len(six_hours.entries)

    def test_skip_keeps_previous_model(self, small_models, stream):
        # a window shorter than the lag cannot form a single feature row
        config = EdgeConfig(small_models["nox"], retrain_period=HOUR, window=2,
                            edge_hyper=HyperParams(n_estimators=2, max_depth=2))
        log = run_edge(config, stream[:130], 2 * HOUR)
        assert [r.skipped for r in log.retrains] == [True, True]
        assert {e.model_id for e in log.entries} == {0}
        assert sum(e.event == "skip" for e in log.entries) == 2

    def test_missing_nox_window_skips(self, small_models):
        config = replace(plantsim.default_config(), seed=5, nox_window=(0.0, 0.0))
        recs = plantsim.generate_dataset(config, 70)
        ec = EdgeConfig(small_models["nox"], retrain_period=HOUR, edge_hyper=HyperParams(n_estimators=2, max_depth=2))
        log = run_edge(ec, recs, HOUR)
        assert log.retrains[0].skipped

    def test_empty_stream(self, small_models):
        log = run_edge(EdgeConfig(small_models["nox"]), [], HOUR)
        assert log.entries == [] and log.retrains == []


def manual_log(pairs_by_model):
    entries = []
    t = 0
    for mid, pairs in pairs_by_model:
        for p, a in pairs:
            entries.append(LogEntry(t, mid, p, a))
            t += 60
    return EdgeLog(entries=entries)


class TestRollingScore:
    def test_perfect_and_mean(self):
        a = [1.0, 4.0, 2.0, 8.0]
        m = float(np.mean(a))
        rep = rolling_score(manual_log([(0, list(zip(a, a))), (1, [(m, v) for v in a])]))
        assert [s.r2 for s in rep.segments] == [1.0, 0.0]

    def test_matches_external_r2(self, six_hours):
        rep = rolling_score(six_hours)
        for seg in rep.segments:
            rows = [(e.prediction, e.actual) for e in six_hours.predictions
                    if e.model_id == seg.retrain_id and e.prediction is not None]
            assert seg.n == len(rows)
            if len(rows) < 2:
                assert seg.r2 is None
                continue
            p, a = np.array(rows).T
            assert seg.r2 == r2(a, p)

    def test_horizon(self):
        a = [1.0, 2.0, 3.0, 10.0]
        rep = rolling_score(manual_log([(0, [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (0.0, 10.0)])]), horizon=3)
        assert rep.segments[0].r2 == 1.0 and rep.segments[0].n == 3

    def test_constant_segment_reported(self):
        rep = rolling_score(manual_log([(0, [(1.0, 5.0), (2.0, 5.0)]), (1, [(1.0, 1.0), (2.0, 2.0)])]))
        assert rep.segments[0].r2 is None and "constant" in rep.segments[0].reason
        assert rep.segments[1].r2 == 1.0

    def test_no_actuals(self):
        rep = rolling_score(manual_log([(0, [(1.0, None), (2.0, None)])]))
        assert rep.segments == [] and rep.reason
