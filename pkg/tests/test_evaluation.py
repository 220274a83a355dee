import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxtune.descriptors import DescriptorSeries, series_cv
from ctxtune.evaluation import (
    EvalConfig,
    OnlineEvaluator,
    _RunningCV,
    alarm,
    density_score,
    error_score,
    interaction_score,
    neighbors,
    occlusion_level,
    occlusion_pair,
)
from ctxtune.geometry import BBox
from ctxtune.synth import generate, scenario
from ctxtune.tracker import TrackerState

from scenes import det

A, B = "appearance-stable/size-noisy", "size-stable/appearance-noisy"


def test_neighbour_rule():
    o = det(0, 0)
    assert neighbors(o, [det(0, 0)]) != []
    assert neighbors(det(0, 0, 10, 10), [det(1000, 0, 10, 10)]) == []
    # mean diagonal 14.14, threshold 21.2
    assert neighbors(o, [det(20, 0)]) != []
    assert neighbors(o, [det(21.3, 0)]) == []


def test_density_examples():
    o = det(0, 0)
    assert density_score(o, []) == 0.0
    assert density_score(o, [det(0, 0)]) == 1.0
    assert density_score(o, [det(20, 0)]) == pytest.approx(200 / 300, abs=1e-12)


def test_occlusion_examples():
    assert occlusion_pair(BBox(2, 2, 3, 3), BBox(0, 0, 10, 10)) == 1.0
    assert occlusion_pair(BBox(0, 0, 10, 10), BBox(30, 0, 10, 10)) == 0.0
    assert occlusion_pair(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == 0.5
    o = det(0, 0)
    assert occlusion_level(o, []) == 0.0
    assert occlusion_level(o, [det(0, 0, 20, 20)]) == 1.0
    assert occlusion_level(o, [det(8, 0), det(5, 0)]) == 0.5


def test_interaction_examples():
    assert interaction_score(0, 0, 0) == 0
    assert interaction_score(1, 1, 1) == 1
    assert interaction_score(0.6, 0.3, 0.0) == pytest.approx(0.3, abs=1e-12)


class _FixedSeries(DescriptorSeries):
    def __init__(self, terms):
        super().__init__()
        self._terms = terms

    def error_terms(self):
        return self._terms


def test_error_score_examples():
    s = DescriptorSeries()
    for t in range(5):
        s.update(det(0, 0, frame=t))
    assert error_score(s) == 0.0
    assert error_score(_FixedSeries((0.1, 0.2, 0.3, 0.4))) == pytest.approx(0.25, abs=1e-12)
    assert error_score(_FixedSeries((0.0, 0.2, 0.2, 0.2))) == pytest.approx(0.15, abs=1e-12)


def test_error_score_ignores_short_series():
    s = DescriptorSeries()
    s.update(det(0, 0, frame=0))
    s.update(det(3, 4, frame=1))
    # one sample per series: every CV counts as 0
    assert error_score(s) == 0.0


def test_alarm_examples():
    assert alarm(0.25, 0.30, 0.14)
    assert not alarm(0.25, 0.30, 0.20)
    assert not alarm(0.0, 1.0, 0.0)
    # strict comparisons at the threshold
    assert not alarm(0.2, 0.5, 0.0)
    assert not alarm(0.5, 0.2, 0.0)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(th1=0.0)
    with pytest.raises(ValueError):
        EvalConfig(th2=1.0)


unit = st.floats(0, 1)


@given(unit, unit, unit, unit)
def test_alarm_monotone_in_error(i, e1, e2, ep):
    lo, hi = sorted((e1, e2))
    assert not (alarm(i, lo, ep) and not alarm(i, hi, ep))


@given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=80), st.integers(2, 25))
def test_running_cv_matches_direct(values, window):
    rc = _RunningCV(window)
    for k, v in enumerate(values):
        got = rc.add(v)
        tail = values[max(0, k + 1 - window) : k + 1]
        want = series_cv(tail) if len(tail) >= 2 else 0.0
        assert got == pytest.approx(want, rel=1e-6, abs=1e-7)


def test_running_cv_constant_is_exactly_zero():
    rc = _RunningCV(20)
    for _ in range(100):
        assert rc.add(0.731) == 0.0


def _reference_scores(seq):
    """Scores recomputed per object from the scalar definitions."""
    tracker = TrackerState()
    series: dict[int, DescriptorSeries] = {}
    last_error: dict[int, float] = {}
    prev = None
    frames = []
    for t, dets in enumerate(seq.detections_by_frame):
        items = tracker.step(t, dets)
        rows = []
        for tid, d in items:
            s = series.setdefault(tid, DescriptorSeries())
            s.update(d)
            e = error_score(s)
            others = [x for i, x in items if i != tid]
            nb = neighbors(d, others)
            occ_prev = 0.0
            if prev is not None:
                occ_prev = occlusion_level(d, neighbors(d, [x for i, x in prev if i != tid]))
            inter = interaction_score(density_score(d, nb), occ_prev, occlusion_level(d, nb))
            e_prev = last_error.get(tid)
            rows.append((tid, inter, e, e_prev is not None and alarm(inter, e, e_prev)))
            last_error[tid] = e
        frames.append((items, tracker.link_sims.copy(), rows))
        prev = items
    return frames


@pytest.mark.parametrize("seed", [0, 3])
def test_online_evaluator_matches_reference(seed):
    seq = generate(scenario([(A, 120), ("crowded-crossing", 120), (B, 120)], seed=seed))
    full, fast, no_sims = OnlineEvaluator(), OnlineEvaluator(), OnlineEvaluator()
    n_alarms = 0
    for t, (items, sims, rows) in enumerate(_reference_scores(seq)):
        fired, scores = full.evaluate(t, items, sims)
        assert fast.check(t, items, sims) == fired
        assert no_sims.check(t, items) == fired
        assert fired == any(r[3] for r in rows)
        for sc, (tid, inter, e, a) in zip(scores, rows):
            assert sc.track_id == tid
            assert sc.interaction == pytest.approx(inter, abs=1e-9)
            assert sc.error == pytest.approx(e, abs=1e-9)
            assert sc.alarm == a
        n_alarms += fired
    assert n_alarms > 0


def test_no_alarm_without_previous_error():
    ev = OnlineEvaluator()
    fired, scores = ev.evaluate(0, [(1, det(0, 0)), (2, det(1, 0))])
    assert not fired
    assert all(s.error_prev is None for s in scores)


def test_frames_must_increase():
    ev = OnlineEvaluator()
    ev.check(3, [])
    with pytest.raises(ValueError):
        ev.check(3, [])


def test_previous_occlusion_requires_consecutive_frame():
    ev = OnlineEvaluator()
    ev.evaluate(0, [(1, det(50, 0)), (2, det(55, 0))])
    _, scores = ev.evaluate(1, [(1, det(50, 0))])
    assert scores[0].occlusion_prev == 0.5
    _, scores = ev.evaluate(3, [(1, det(50, 0))])
    assert scores[0].occlusion_prev == 0.0


def test_alarm_grid_against_restatement():
    grid = [round(0.05 * k, 2) for k in range(21)]
    for i, e, ep in itertools.product(grid, grid, grid):
        want = (i > 0.2) and (e > 0.2) and (e - ep > 0.15)
        assert alarm(i, e, ep) == want
