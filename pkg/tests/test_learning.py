import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxtune.context import ContextSignature
from ctxtune.learning import (
    AdaboostWeightLearner,
    ContextLearner,
    LabeledPair,
    QTClustering,
    adaboost_weights,
    cluster_params,
    make_pairs,
    qt_cluster,
    qt_cluster_indices,
)
from ctxtune.model import Appearance, Detection, SceneSequence, Track, TrackerParams
from ctxtune.geometry import BBox
from ctxtune.synth import generate, scenario

import bench
from scenes import det, one_hot_appearance


def test_single_track_pair():
    tr = Track(1, (det(0, 0, frame=0), det(1, 0, frame=1)))
    pairs = make_pairs([tr])
    assert [p.label for p in pairs] == [1]


def test_parallel_tracks_pairs():
    a = Track(1, (det(0, 0, frame=0), det(1, 0, frame=1)))
    b = Track(2, (det(50, 0, frame=0), det(51, 0, frame=1)))
    pairs = make_pairs([a, b])
    pos = [p for p in pairs if p.label == 1]
    neg = [p for p in pairs if p.label == -1]
    assert len(pos) == 2 and len(neg) <= 6
    # enumeration: cross-id pairs one frame apart
    assert {(p.a.bbox.x, p.b.bbox.x) for p in neg} == {(0, 51), (50, 1)}


def test_window_gate():
    tr = Track(1, (det(0, 0, frame=0), det(1, 0, frame=20)))
    assert make_pairs([tr], temporal_window=10) == []


def test_negatives_capped():
    tracks = [Track(i + 1, tuple(det(30.0 * i, 0, frame=t) for t in range(3))) for i in range(6)]
    pairs = make_pairs(tracks, neg_ratio=3.0)
    n_pos = sum(p.label == 1 for p in pairs)
    assert n_pos == 12 and sum(p.label == -1 for p in pairs) == 36


def test_pairs_from_detections_use_iou_labels():
    gt = Track(1, (det(0, 0, frame=0), det(2, 0, frame=1)))
    dets = [[det(0.5, 0, frame=0)], [det(2.5, 0, frame=1), det(60, 60, frame=1)]]
    pairs = make_pairs([gt], dets)
    assert len(pairs) == 1 and pairs[0].b.bbox.x == 2.5


def test_labeled_pair_validation():
    d = det(0, 0)
    with pytest.raises(ValueError):
        LabeledPair(d, det(0, 0, frame=1), 0)
    with pytest.raises(ValueError):
        LabeledPair(d, d, 1)


def _informative_set(rng, informative, n=200, margin=0.1):
    y = np.where(rng.random(n) < 0.5, 1, -1)
    X = rng.uniform(size=(n, 5))
    lo = rng.uniform(0.0, 0.5 - margin, n)
    hi = rng.uniform(0.5 + margin, 1.0, n)
    X[:, informative] = np.where(y > 0, hi, lo)
    return X, y


@settings(max_examples=20)
@given(st.integers(0, 4), st.integers(0, 2**32 - 1), st.floats(0.02, 0.3))
def test_adaboost_single_informative_descriptor(k, seed, margin):
    X, y = _informative_set(np.random.default_rng(seed), k, margin=margin)
    learner = AdaboostWeightLearner().fit(X, y)
    assert learner.weights_[k] >= 0.9
    assert np.all(np.diff(learner.training_errors_) <= 0)
    assert (learner.predict(X) == y).all()


def test_adaboost_histogram_pairs():
    colours = [1, 4, 7, 10]
    tracks = [
        Track(i + 1, tuple(det(40.0 * i, 0, frame=t, appearance=one_hot_appearance(c)) for t in range(6)))
        for i, c in enumerate(colours)
    ]
    params = adaboost_weights(make_pairs(tracks, temporal_window=3))
    # histogram and dominant colour are equally perfect; the first wins every round
    assert params.w[2] > 0.9


def test_adaboost_needs_both_labels():
    with pytest.raises(ValueError):
        AdaboostWeightLearner().fit(np.zeros((3, 5)), [1, 1, 1])
    with pytest.raises(ValueError):
        AdaboostWeightLearner().fit(np.zeros((3, 5)), [0, 1, 1])


def test_adaboost_uninformative_falls_back(caplog):
    X = np.full((4, 5), 0.5)
    with caplog.at_level(logging.WARNING):
        learner = AdaboostWeightLearner(n_rounds=5).fit(X, [1, -1, 1, -1])
    assert np.allclose(learner.weights_.sum(), 1.0)


def brute_force_qt(dist, diameter):
    """Repeatedly remove the largest subset of diameter <= threshold (ties: lexicographically first)."""
    pool = list(range(len(dist)))
    out = []
    while pool:
        best = None
        for size in range(len(pool), 0, -1):
            for combo in itertools.combinations(pool, size):
                if all(dist[i, j] <= diameter for i, j in itertools.combinations(combo, 2)):
                    best = list(combo)
                    break
            if best:
                break
        out.append(best)
        pool = [i for i in pool if i not in best]
    return out


def planted_distances(rng, sizes, intra=0.1, inter=0.6):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    d = np.where(labels[:, None] == labels[None, :], rng.uniform(0, intra, (n, n)), rng.uniform(inter, 1.0, (n, n)))
    d = np.triu(d, 1)
    d = d + d.T
    perm = rng.permutation(n)
    return d[np.ix_(perm, perm)], labels[perm]


def test_qt_examples():
    assert qt_cluster_indices(np.zeros((4, 4)), 0.3) == [[0, 1, 2, 3]]
    assert qt_cluster_indices(np.zeros((1, 1)), 0.3) == [[0]]
    d, _ = planted_distances(np.random.default_rng(0), [3, 3, 1])
    clusters = qt_cluster_indices(d, 0.3)
    assert sorted(len(c) for c in clusters) == [1, 3, 3]
    assert sorted(map(sorted, clusters)) == sorted(map(sorted, brute_force_qt(d, 0.3)))


@settings(max_examples=40)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_qt_matches_brute_force_on_planted(sizes, seed):
    d, labels = planted_distances(np.random.default_rng(seed), sizes)
    got = qt_cluster_indices(d, 0.3)
    assert sorted(map(sorted, got)) == sorted(map(sorted, brute_force_qt(d, 0.3)))
    for c in got:
        assert len(set(labels[c])) == 1
        assert max((d[i, j] for i in c for j in c), default=0.0) <= 0.3


def test_qt_estimator_labels():
    d, labels = planted_distances(np.random.default_rng(3), [2, 3])
    est = QTClustering(0.3).fit(d)
    assert len(est.clusters_) == 2
    for k in range(2):
        assert len(set(labels[est.labels_ == k])) == 1


def test_qt_on_signatures():
    levels = [0.1, 0.5, 0.9]
    sigs = [ContextSignature.from_vectors(np.full((20, 6), lv + 0.01 * r)) for lv in levels for r in range(2)]
    assert sorted(qt_cluster(sigs, 0.3)) == [[0, 1], [2, 3], [4, 5]]


def test_cluster_params_examples():
    p1, p2 = TrackerParams.one_hot(1), TrackerParams.one_hot(2)
    assert cluster_params([(p1, 40)]) == p1
    assert cluster_params([(p1, 50), (p2, 50)]).w == pytest.approx((0.5, 0.5, 0, 0, 0))
    assert cluster_params([(p1, 100), (p2, 300)]).w == pytest.approx((0.25, 0.75, 0, 0, 0))
    with pytest.raises(ValueError):
        cluster_params([])


def _renamed(seq, name):
    return SceneSequence(seq.frame_width, seq.frame_height, seq.fps, seq.detections_by_frame, seq.ground_truth, name)


def test_learner_stable_video_single_cluster():
    seq = generate(scenario(bench.REGIME_A, seed=100, length=200))
    db = ContextLearner().fit([seq]).database_
    assert len(db) == 1


def test_learner_duplicate_videos_share_clusters():
    seq = generate(scenario(bench.REGIME_A, seed=101, length=200))
    db = ContextLearner().fit([_renamed(seq, "first"), _renamed(seq, "second")]).database_
    assert len(db) >= 1
    for c in db.clusters:
        assert {p[0] for p in c.provenance} == {"first", "second"}


def test_learner_skips_video_without_pairs():
    frames = [(Detection(0, BBox(0, 0, 5, 5)),)]
    seq = SceneSequence(50, 50, 25, tuple(frames), (Track(1, frames[0]),), "lonely")
    learner = ContextLearner().fit([seq])
    assert learner.skipped_videos_ == ["lonely"] and len(learner.database_) == 0


def test_learner_requires_ground_truth():
    seq = generate(scenario(bench.REGIME_A, seed=1, length=20))
    with pytest.raises(ValueError):
        ContextLearner().fit([SceneSequence(seq.frame_width, seq.frame_height, seq.fps, seq.detections_by_frame)])


@pytest.mark.slow
def test_learned_regime_weights():
    b = bench.build()
    pa, pb = b.params[bench.REGIME_A], b.params[bench.REGIME_B]
    # colour-reliable regime leans on colour, size-reliable regime on size descriptors
    assert pa.w[2] + pa.w[4] >= 0.5
    assert pb.w[0] + pb.w[1] >= 0.5
    assert pa != pb
