import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxtune.context import ContextFeatureExtractor, ContextSignature
from ctxtune.controller import NO_MATCH, AdaptiveTracker, ControllerConfig, ControlLog, ControlRecord, match_cluster, run_controller
from ctxtune.learning import ClusterEntry, LearnedDatabase
from ctxtune.model import TrackerParams
from ctxtune.synth import generate, scenario
from ctxtune.tracker import TrackerState, run_tracker

from scenes import walking_scene

P0 = TrackerParams()
P1 = TrackerParams((0.1, 0.1, 0.6, 0.1, 0.1))


def _db(*entries):
    return LearnedDatabase(tuple(ClusterEntry(cid, sig, p) for cid, sig, p in entries))


def _sig(rows):
    return ContextSignature.from_vectors(np.asarray(rows, dtype=float))


def exhaustive_match(window, db, th3):
    """Direct count of covered window values per cluster, then minimum and gate."""
    best = None
    for c in db.clusters:
        covered = 0
        for row in window.vectors:
            for f, v in enumerate(row):
                covered += any(abs(v - w.center) <= w.radius for w in c.signature.books[f])
        d = 1.0 - covered / (6 * len(window.vectors))
        if best is None or d < best[0] or (d == best[0] and c.id < best[1]):
            best = (d, c.id)
    if best is None or not best[0] < th3:
        return None
    return best[1]


def test_match_examples():
    window = _sig([[0.5] * 6] * 10)
    near = _sig([[0.5] * 6])
    half = _sig([[0.5] * 3 + [0.9] * 3])
    far = _sig([[0.0] * 6])
    # 2 of 6 features covered -> 0.667; 4 of 6 -> 0.333
    two = _sig([[0.5] * 2 + [0.9] * 4])
    four = _sig([[0.5] * 4 + [0.9] * 2])
    cluster, dist = match_cluster(window, _db((1, four, P0), (2, two, P1)), 0.5)
    assert cluster.id == 1 and dist[1] == pytest.approx(1 / 3) and dist[2] == pytest.approx(2 / 3)
    assert match_cluster(window, _db((1, far, P0), (2, half, P0)), 0.5)[0] is None
    assert match_cluster(window, _db((3, far, P0), (7, near, P1)), 0.5)[0].id == 7
    assert match_cluster(window, LearnedDatabase(), 0.5) == (None, {})


def test_match_tie_goes_to_lowest_id():
    window = _sig([[0.5] * 6] * 3)
    c = _sig([[0.5] * 6])
    assert match_cluster(window, _db((9, c, P0), (4, c, P1)), 0.5)[0].id == 4


grid = st.integers(0, 10).map(lambda k: k / 10)


@settings(max_examples=200)
@given(
    st.lists(st.lists(grid, min_size=6, max_size=6), min_size=1, max_size=8),
    st.lists(st.lists(st.lists(grid, min_size=6, max_size=6), min_size=1, max_size=5), min_size=0, max_size=6),
    st.sampled_from([0.3, 0.5, 0.7]),
)
def test_match_agrees_with_exhaustive_scan(window_rows, clusters, th3):
    window = _sig(window_rows)
    db = _db(*((i + 1, _sig(rows), P0) for i, rows in enumerate(clusters)))
    cluster, _ = match_cluster(window, db, th3)
    assert (None if cluster is None else cluster.id) == exhaustive_match(window, db, th3)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(th3=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(n=0)
    with pytest.raises(ValueError):
        ControllerConfig(cooldown=-1)
    assert ControllerConfig(n=30).cooldown_frames == 30


def _crowded(seed=0, length=200):
    return generate(scenario("crowded-crossing", seed=seed, length=length))


def _covering_db(seq, params, cid=1):
    rows = ContextFeatureExtractor().transform(seq)
    return _db((cid, _sig(rows), params))


def test_no_alarm_no_tuning():
    seq = walking_scene(60)
    tracks, ctl = run_controller(seq, _covering_db(seq, P1), P0)
    assert ctl.log.tuning_frames == [] and ctl.params == P0
    assert not any(r.alarm for r in ctl.log.records)


def test_alarm_with_empty_db_marks_window():
    seq = _crowded()
    _, ctl = run_controller(seq, LearnedDatabase(), P0, ControllerConfig(n=20))
    alarms = [r for r in ctl.log.records if r.alarm]
    assert alarms, "scene should raise alarms"
    assert ctl.log.tuning_frames == [] and ctl.params == P0
    assert all(r.cluster_id == NO_MATCH for r in alarms)
    assert len(ctl.log.unmatched_windows) == len(alarms)
    for (start, end), r in zip(ctl.log.unmatched_windows, alarms):
        assert end == r.frame and end - start == min(19, end)


def test_alarm_and_match_switch_params_from_next_frame():
    seq = _crowded(1)
    tracks, ctl = run_controller(seq, _covering_db(seq, P1), P0)
    first_alarm = next(r.frame for r in ctl.log.records if r.alarm)
    assert ctl.log.tuning_frames[0] == first_alarm
    assert ctl.log.records[first_alarm].w == P1.w
    assert ctl.log.records[first_alarm - 1].w == P0.w if first_alarm else True
    state = TrackerState(P0)
    for t, dets in enumerate(seq.detections_by_frame):
        if t == first_alarm + 1:
            state.set_params(P1)
        state.step(t, dets)
    assert [x.observations for x in state.tracks()] == [x.observations for x in tracks]


def test_cooldown_and_same_params_match():
    seq = _crowded(2, 300)
    n = 40
    _, ctl = run_controller(seq, _covering_db(seq, P1), P0, ControllerConfig(n=n))
    assert len(ctl.log.tuning_frames) == 1
    t0 = ctl.log.tuning_frames[0]
    for r in ctl.log.records:
        if r.alarm and r.frame > t0:
            if r.frame - t0 < n:
                assert r.cluster_id is None
            else:
                # matching ran but the cluster already holds the current params
                assert r.cluster_id == 1
    assert any(r.alarm and r.frame - t0 >= n for r in ctl.log.records)


def test_noop_database_reproduces_fixed_tracker():
    seq = _crowded(3)
    tracks, ctl = run_controller(seq, _covering_db(seq, P0), P0)
    assert ctl.log.tuning_frames == []
    assert [t.observations for t in tracks] == [t.observations for t in run_tracker(seq, P0)]


def test_keep_scores():
    seq = _crowded(4, 60)
    _, ctl = run_controller(seq, LearnedDatabase(), P0, keep_scores=True)
    assert len(ctl.scores) == sum(len(f) for f in seq.detections_by_frame)
    assert [r.alarm for r in ctl.log.records] == [
        any(s.alarm for s in ctl.scores if s.frame == t) for t in range(len(seq))
    ]


def test_log_order_enforced():
    log = ControlLog()
    log.append(ControlRecord(3, False, None, P0.w))
    with pytest.raises(ValueError):
        log.append(ControlRecord(3, False, None, P0.w))


def test_adaptive_tracker_estimator():
    seq = _crowded(5, 80)
    est = AdaptiveTracker(database=_covering_db(seq, P1))
    out = est.fit().predict(seq)
    assert sum(len(t) for t in out) == sum(len(f) for f in seq.detections_by_frame)
    assert "database" in est.get_params()
