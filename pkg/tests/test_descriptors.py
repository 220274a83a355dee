import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctxtune.descriptors import (
    DescriptorSeries,
    DetectionBatch,
    link_similarity,
    paired_similarities,
    series_cv,
    similarity_matrix,
)
from ctxtune.geometry import BBox
from ctxtune.model import Detection

from scenes import det, one_hot_appearance, random_appearance


def test_identity_similarity_is_one():
    rng = np.random.default_rng(1)
    d = det(3, 4, 7, 9, appearance=random_appearance(rng))
    for k in range(1, 6):
        assert link_similarity(k, d, d) == pytest.approx(1.0, abs=1e-12)


def test_area_ratio():
    assert link_similarity(2, det(0, 0, 10, 10), det(0, 0, 10, 5)) == 0.5


def test_disjoint_histograms():
    a = det(0, 0, appearance=one_hot_appearance(1))
    b = det(0, 0, appearance=one_hot_appearance(2))
    assert link_similarity(3, a, b) == 0.0
    assert link_similarity(5, a, b) == 0.0


def test_bad_descriptor_index():
    with pytest.raises(ValueError):
        link_similarity(6, det(0, 0), det(0, 0))


def test_series_cv_examples():
    assert series_cv([2, 2, 2, 2]) == 0.0
    assert series_cv([1, 3]) == 0.5
    assert series_cv([1e-12, 1e-12, 2e-12]) == 0.0
    with pytest.raises(ValueError):
        series_cv([1.0])


def test_speed_sample():
    s = DescriptorSeries()
    s.update(Detection(0, BBox(-5, -5, 10, 10)))
    s.update(Detection(1, BBox(-2, -1, 10, 10)))
    assert list(s.speed) == [5.0]
    assert list(s.histogram) == [1.0]


def test_straight_line_has_no_direction_change():
    s = DescriptorSeries()
    for t in range(6):
        s.update(det(2.0 * t, 1.0 * t, frame=t))
    assert list(s.direction) == pytest.approx([0.0] * 4, abs=1e-12)


def test_first_observation_only_primes():
    s = DescriptorSeries()
    s.update(det(0, 0))
    assert all(len(x) == 0 for x in s.series)
    assert s.error_terms() == (0.0, 0.0, 0.0, 0.0)


def test_out_of_order_observation():
    s = DescriptorSeries()
    s.update(det(0, 0, frame=3))
    with pytest.raises(ValueError):
        s.update(det(0, 0, frame=3))


def test_window_bounds_series():
    s = DescriptorSeries(window=4)
    for t in range(10):
        s.update(det(t * t, 0, frame=t))
    assert len(s.speed) == 4


values = st.lists(st.floats(0.01, 1e3), min_size=2, max_size=30)


@given(values, st.floats(0.01, 100))
def test_cv_scale_invariant(xs, c):
    assert series_cv([c * x for x in xs]) == pytest.approx(series_cv(xs), rel=1e-9, abs=1e-12)


@given(values)
def test_cv_matches_numpy(xs):
    a = np.array(xs)
    assert series_cv(xs) == pytest.approx(a.std() / a.mean(), rel=1e-9, abs=1e-12)


@given(st.floats(0, 2 * math.pi), st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=10))
def test_speed_and_direction_rotation_invariant(theta, steps):
    c, s_ = math.cos(theta), math.sin(theta)

    def run(rotate):
        series = DescriptorSeries()
        x = y = 0.0
        for t, (dx, dy) in enumerate([(0.0, 0.0), *steps]):
            if rotate:
                dx, dy = c * dx - s_ * dy, s_ * dx + c * dy
            x, y = x + dx, y + dy
            series.update(det(x, y, frame=t))
        return series

    a, b = run(False), run(True)
    assert list(b.speed) == pytest.approx(list(a.speed), abs=1e-9)
    assert len(a.direction) == len(b.direction)
    for u, v in zip(a.direction, b.direction):
        # turns of exactly pi may flip sign under rounding; compare the magnitude
        assert min(abs(u - v), abs(2 * math.pi - u - v)) < 1e-6


def test_batch_similarities_match_scalar():
    rng = np.random.default_rng(5)
    dets = [
        Detection(0, BBox(*rng.uniform(0, 50, 2), *rng.uniform(1, 20, 2)), 1.0, random_appearance(rng)) for _ in range(7)
    ]
    a, b = DetectionBatch(dets[:4]), DetectionBatch(dets[3:])
    m = similarity_matrix(a, b, sigma_cov=0.7)
    for i in range(4):
        for j in range(4):
            for k in range(5):
                assert m[k, i, j] == pytest.approx(link_similarity(k + 1, dets[i], dets[3 + j], 0.7), abs=1e-12)
    paired = paired_similarities(a, b, sigma_cov=0.7)
    assert np.allclose(paired, m[:, np.arange(4), np.arange(4)].T, atol=1e-14)


def test_paired_length_mismatch():
    with pytest.raises(ValueError):
        paired_similarities(DetectionBatch([det(0, 0)]), DetectionBatch([]))
