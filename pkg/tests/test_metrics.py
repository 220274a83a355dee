import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxtune.metrics import clear_mot, clear_mot_counts, coverage_counts, coverage_metrics, evaluate_tracks, percentages
from ctxtune.model import Track

from scenes import walking_scene


def _gt():
    return walking_scene(10).ground_truth


def test_perfect_output():
    gt = _gt()
    assert coverage_metrics(gt, gt) == (100.0, 0.0, 0.0)
    assert clear_mot(gt, gt) == (1.0, 1.0)


def test_table_row_arithmetic():
    mt, pt, ml = percentages(32, 2, 4)
    assert round(mt, 1) == 84.2 and round(pt, 1) == 5.3 and round(ml, 1) == 10.5


def test_id_switch_example():
    gt = _gt()
    a, b = gt
    out = [Track(1, a.observations[:5]), Track(3, a.observations[5:]), Track(2, b.observations)]
    counts = clear_mot_counts(gt, out)
    assert counts.id_switches == 1 and counts.misses == 0 and counts.false_positives == 0
    assert counts.mota == 1 - 1 / 20 == 0.95


def test_switch_back_counts_twice():
    a, b = _gt()
    out = [Track(1, a.observations[:3] + a.observations[6:]), Track(5, a.observations[3:6]), Track(2, b.observations)]
    assert clear_mot_counts([a, b], out).id_switches == 2


def test_empty_output():
    report = evaluate_tracks(_gt(), [])
    assert report.mota == 0.0 and report.motp == 0.0 and report.ml == 100.0
    assert report.mota_raw == 0.0


def test_false_positives_make_raw_mota_negative():
    gt = _gt()
    noise = [Track(10 + i, tuple(d for d in t.observations)) for i, t in enumerate(walking_scene(10).ground_truth)]
    shifted = [Track(t.id, tuple(type(d)(d.frame, d.bbox.translate(100, 0)) for d in t.observations)) for t in noise]
    report = evaluate_tracks(gt, shifted)
    assert report.mota_raw == -1.0 and report.mota == 0.0


@pytest.mark.parametrize("covered,label", [(5, "PT"), (8, "PT"), (9, "MT"), (2, "PT"), (1, "ML")])
def test_coverage_boundaries(covered, label):
    a, b = _gt()
    out = [Track(1, a.observations[:covered])]
    mt, pt, ml = coverage_counts([a], out)
    assert {"MT": (1, 0, 0), "PT": (0, 1, 0), "ML": (0, 0, 1)}[label] == (mt, pt, ml)


def test_empty_ground_truth_rejected():
    with pytest.raises(ValueError):
        coverage_metrics([], [])


@given(st.permutations([1, 2, 3]), st.integers(4, 100))
def test_relabelling_output_is_invariant(perm, offset):
    a, b = _gt()
    out = [Track(1, a.observations[:4]), Track(2, a.observations[4:]), Track(3, b.observations)]
    relabelled = [Track(perm[i] + offset, t.observations) for i, t in enumerate(out)]
    assert evaluate_tracks([a, b], out) == evaluate_tracks([a, b], relabelled)


def test_report_rendering():
    gt = _gt()
    report = evaluate_tracks(gt, gt)
    assert "MT%" in report.table()
    head, row = report.csv_rows()
    assert head.split(",")[0] == "gt" and row.split(",")[1] == "100"
