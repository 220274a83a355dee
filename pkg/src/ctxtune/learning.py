"""Offline learning of context clusters and their tracker weights.

Per training video: context features are extracted frame by frame and the
video is cut into stable-context chunks. For every chunk, detection pairs
labelled from the annotations train a boosted ensemble of decision stumps,
one stump family per link similarity; each descriptor's weight is the total
vote of the stumps built on it. The chunk contexts are then grouped with
quality-threshold clustering and each cluster receives the length-weighted
mean of its members' weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .context import (
    DEFAULT_BREAK_PATIENCE,
    DEFAULT_MIN_CHUNK_LEN,
    DEFAULT_RADIUS,
    ContextChunk,
    ContextSignature,
    frame_features_batch,
    segment,
    symmetric_context_distance,
)
from .descriptors import DEFAULT_SIGMA_COV, DetectionBatch, paired_similarities
from .evaluation import DEFAULT_NEIGHBOR_ALPHA
from .geometry import iou
from .model import N_DESCRIPTORS, Detection, SceneSequence, Track, TrackerParams
from .validation import check_sequence

logger = logging.getLogger(__name__)

DB_VERSION = 1


@dataclass(frozen=True, slots=True)
class LabeledPair:
    a: Detection
    b: Detection
    label: int

    def __post_init__(self) -> None:
        if self.label not in (-1, 1):
            raise ValueError("pair label must be +1 or -1")
        if self.a is self.b:
            raise ValueError("a pair needs two distinct detections")


def _match_to_ground_truth(
    ground_truth: Sequence[Track], detections_by_frame: Sequence[Sequence[Detection]], iou_thresh: float
) -> dict[int, list[Detection]]:
    """Label detections with ground-truth ids by per-frame maximum-IoU matching."""
    gt_at: dict[int, list[tuple[int, Detection]]] = {}
    for tr in ground_truth:
        for d in tr.observations:
            gt_at.setdefault(d.frame, []).append((tr.id, d))
    labelled: dict[int, list[Detection]] = {}
    for t, gts in sorted(gt_at.items()):
        dets = detections_by_frame[t] if t < len(detections_by_frame) else ()
        if not dets:
            continue
        overlap = np.array([[iou(g.bbox, d.bbox) for d in dets] for _, g in gts])
        rows, cols = linear_sum_assignment(-overlap)
        for r, c in zip(rows, cols):
            if overlap[r, c] >= iou_thresh:
                labelled.setdefault(gts[r][0], []).append(dets[c])
    return labelled


def make_pairs(
    ground_truth: Sequence[Track],
    detections_by_frame: Sequence[Sequence[Detection]] | None = None,
    temporal_window: int = 10,
    *,
    neg_ratio: float = 3.0,
    seed: int | np.random.SeedSequence | None = 0,
    iou_thresh: float = 0.5,
) -> list[LabeledPair]:
    """Positive and negative detection pairs within ``temporal_window`` frames.

    Positives link each labelled detection to the next one of the same
    identity. Negatives pair detections of different identities 1..T frames
    apart and are subsampled to at most ``neg_ratio`` times the positives.
    Without ``detections_by_frame`` the annotated boxes themselves are used.
    """
    if not ground_truth:
        raise ValueError("make_pairs needs ground-truth tracks")
    if detections_by_frame is None:
        labelled = {tr.id: list(tr.observations) for tr in ground_truth}
    else:
        labelled = _match_to_ground_truth(ground_truth, detections_by_frame, iou_thresh)

    positives = []
    for obs in labelled.values():
        for a, b in zip(obs, obs[1:]):
            if b.frame - a.frame <= temporal_window:
                positives.append(LabeledPair(a, b, 1))

    by_frame: dict[int, list[tuple[int, Detection]]] = {}
    for gid, obs in labelled.items():
        for d in obs:
            by_frame.setdefault(d.frame, []).append((gid, d))
    candidates = []
    for t in sorted(by_frame):
        for gap in range(1, temporal_window + 1):
            later = by_frame.get(t + gap)
            if not later:
                continue
            for gi, a in by_frame[t]:
                for gj, b in later:
                    if gi != gj:
                        candidates.append((a, b))
    cap = int(math.floor(neg_ratio * len(positives)))
    if len(candidates) > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(candidates), size=cap, replace=False))
        candidates = [candidates[i] for i in keep]
    return positives + [LabeledPair(a, b, -1) for a, b in candidates]


def pair_similarities(pairs: Sequence[LabeledPair], sigma_cov: float = DEFAULT_SIGMA_COV) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix ``(n_pairs, 5)`` of link similarities and the label vector."""
    if not pairs:
        return np.empty((0, N_DESCRIPTORS)), np.empty(0, dtype=int)
    X = paired_similarities(DetectionBatch([p.a for p in pairs]), DetectionBatch([p.b for p in pairs]), sigma_cov)
    y = np.array([p.label for p in pairs], dtype=int)
    return X, y


class AdaboostWeightLearner(ClassifierMixin, BaseEstimator):
    """Discrete AdaBoost over threshold stumps on the five link similarities.

    Parameters
    ----------
    n_rounds : int
        Boosting rounds.
    n_thresholds : int
        Stump thresholds, evenly spaced over [0, 1].
    error_clip : float
        Weighted errors are clamped to ``[error_clip, 1 - error_clip]``.

    Attributes
    ----------
    stumps_ : list of (feature, threshold, polarity)
    alphas_ : ndarray
        Vote of each round's stump.
    weights_ : ndarray of shape (n_features,)
        Normalised per-feature sum of votes.
    training_errors_ : ndarray
        Ensemble training error after each round.
    """

    def __init__(self, n_rounds: int = 50, n_thresholds: int = 32, error_clip: float = 1e-6):
        self.n_rounds = n_rounds
        self.n_thresholds = n_thresholds
        self.error_clip = error_clip

    def fit(self, X, y, sample_weight=None):
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("X and y have inconsistent lengths")
        labels = np.unique(y)
        if not set(labels.tolist()) <= {-1, 1}:
            raise ValueError(f"labels must be -1/+1, got {labels.tolist()}")
        if len(labels) < 2:
            raise ValueError("boosting needs both positive and negative pairs")
        self.classes_ = np.array([-1, 1])
        n, n_features = X.shape
        self.n_features_in_ = n_features
        thresholds = np.linspace(0.0, 1.0, self.n_thresholds)

        # level[f, i]: number of thresholds <= X[i, f], so "X >= thresholds[j]" is "level > j"
        level = np.stack([np.searchsorted(thresholds, X[:, f], side="right") for f in range(n_features)])
        pos = y > 0

        if sample_weight is None:
            dist = np.full(n, 1.0 / n)
        else:
            dist = np.asarray(sample_weight, dtype=float)
            dist = dist / dist.sum()
        margin = np.zeros(n)
        self.stumps_: list[tuple[int, float, int]] = []
        alphas, errors = [], []
        n_bins = len(thresholds) + 1
        for _ in range(self.n_rounds):
            # polarity +1 predicts +1 when level > j: it errs on positives at
            # level <= j and on negatives at level > j
            err_pos = np.empty((n_features, len(thresholds)))
            for f in range(n_features):
                wpos = np.bincount(level[f], weights=dist * pos, minlength=n_bins)
                wneg = np.bincount(level[f], weights=dist * ~pos, minlength=n_bins)
                err_pos[f] = np.cumsum(wpos)[:-1] + (wneg.sum() - np.cumsum(wneg)[:-1])
            errs = np.stack([err_pos, 1.0 - err_pos])  # (polarity, feature, threshold)
            p, f, j = np.unravel_index(int(np.argmin(errs)), errs.shape)
            eps = min(max(float(errs[p, f, j]), self.error_clip), 1.0 - self.error_clip)
            alpha = 0.5 * math.log((1.0 - eps) / eps)
            polarity = 1 if p == 0 else -1
            pred = np.where(level[f] > j, polarity, -polarity)
            margin += alpha * pred
            dist = dist * np.exp(-alpha * y * pred)
            dist /= dist.sum()
            self.stumps_.append((int(f), float(thresholds[j]), polarity))
            alphas.append(alpha)
            errors.append(float(np.mean(np.where(margin >= 0, 1, -1) != y)))
        self.alphas_ = np.array(alphas)
        self.training_errors_ = np.array(errors)
        votes = np.zeros(n_features)
        for (f, _, _), a in zip(self.stumps_, alphas):
            votes[f] += a
        total = votes.sum()
        if total <= 0:
            logger.warning("boosting found no informative stump; falling back to uniform weights")
            votes[:] = 1.0
            total = float(n_features)
        self.weights_ = votes / total
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "stumps_")
        X = check_array(X, dtype=float)
        out = np.zeros(X.shape[0])
        for (f, thr, pol), a in zip(self.stumps_, self.alphas_):
            out += a * np.where(X[:, f] >= thr, pol, -pol)
        return out

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)


def adaboost_weights(
    pairs: Sequence[LabeledPair],
    rounds: int = 50,
    n_thresholds: int = 32,
    temporal_window: int = 10,
    sigma_cov: float = DEFAULT_SIGMA_COV,
) -> TrackerParams:
    X, y = pair_similarities(pairs, sigma_cov)
    learner = AdaboostWeightLearner(rounds, n_thresholds).fit(X, y)
    return TrackerParams(tuple(learner.weights_), temporal_window)


def _candidate(members: list[int], pool: list[int], dist: np.ndarray, diameter: float) -> list[int]:
    """Grow a cluster from ``members[0]`` by always adding the point that widens it least."""
    cluster = list(members)
    rest = [j for j in pool if j not in cluster]
    # reach[j] = distance from j to the farthest current member
    reach = {j: max(dist[j, m] for m in cluster) for j in rest}
    while rest:
        best = min(rest, key=lambda j: (reach[j], j))
        if reach[best] > diameter:
            break
        cluster.append(best)
        rest.remove(best)
        for j in rest:
            if dist[j, best] > reach[j]:
                reach[j] = dist[j, best]
    return cluster


def qt_cluster_indices(dist: np.ndarray, diameter: float) -> list[list[int]]:
    """Quality-threshold clustering on a symmetric distance matrix.

    Every remaining point seeds a candidate cluster; the largest candidate
    (lowest seed on ties) is kept and removed, until nothing remains.
    """
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("expected a square distance matrix")
    pool = list(range(dist.shape[0]))
    clusters = []
    while pool:
        best: list[int] = []
        for seed in pool:
            cand = _candidate([seed], pool, dist, diameter)
            if len(cand) > len(best):
                best = cand
        clusters.append(sorted(best))
        pool = [i for i in pool if i not in best]
    return clusters


def qt_cluster(contexts: Sequence[ContextSignature], diameter: float = 0.3) -> list[list[int]]:
    """QT clustering of contexts under the symmetrised context distance."""
    if not contexts:
        raise ValueError("qt_cluster needs at least one context")
    return qt_cluster_indices(context_distance_matrix(contexts), diameter)


def context_distance_matrix(contexts: Sequence[ContextSignature]) -> np.ndarray:
    n = len(contexts)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = symmetric_context_distance(contexts[i], contexts[j])
    return dist


class QTClustering(ClusterMixin, BaseEstimator):
    """Quality-threshold clustering on a precomputed distance matrix.

    Attributes
    ----------
    labels_ : ndarray of int
        Cluster index of each sample, in extraction order.
    clusters_ : list of list of int
    """

    def __init__(self, diameter: float = 0.3):
        self.diameter = diameter

    def fit(self, X, y=None):
        self.clusters_ = qt_cluster_indices(X, self.diameter)
        labels = np.empty(len(X), dtype=int)
        for k, members in enumerate(self.clusters_):
            labels[members] = k
        self.labels_ = labels
        return self


def cluster_params(members: Sequence[tuple[TrackerParams, int]]) -> TrackerParams:
    """Chunk-length-weighted mean of member weights."""
    if not members:
        raise ValueError("cluster_params needs at least one member")
    if len(members) == 1:
        return members[0][0]
    lengths = np.array([n for _, n in members], dtype=float)
    W = np.array([p.w for p, _ in members])
    mean = (lengths[:, None] * W).sum(axis=0) / lengths.sum()
    return TrackerParams(tuple(mean), members[0][0].temporal_window)


@dataclass(frozen=True)
class ClusterEntry:
    id: int
    signature: ContextSignature
    params: TrackerParams
    provenance: tuple[tuple[str, int, int, int], ...] = ()


@dataclass(frozen=True)
class LearnedDatabase:
    clusters: tuple[ClusterEntry, ...] = ()
    config: dict[str, Any] = field(default_factory=dict)
    version: int = DB_VERSION

    def __post_init__(self) -> None:
        ids = [c.id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ValueError("cluster ids must be unique")

    def __len__(self) -> int:
        return len(self.clusters)

    def get(self, cluster_id: int) -> ClusterEntry:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise KeyError(cluster_id)


@dataclass(frozen=True)
class _ChunkResult:
    video: str
    chunk: ContextChunk
    params: TrackerParams


class ContextLearner(BaseEstimator):
    """Offline learner building a :class:`LearnedDatabase` from annotated sequences.

    ``fit`` takes a list of :class:`SceneSequence` objects with ground truth.
    Context features come from the annotated boxes (``features_from=
    "ground_truth"``) or from the raw detections.
    """

    def __init__(
        self,
        qt_diameter: float = 0.3,
        n_rounds: int = 50,
        n_thresholds: int = 32,
        temporal_window: int = 10,
        neg_ratio: float = 3.0,
        min_chunk_len: int = DEFAULT_MIN_CHUNK_LEN,
        break_patience: int = DEFAULT_BREAK_PATIENCE,
        radius: float = DEFAULT_RADIUS,
        alpha: float = DEFAULT_NEIGHBOR_ALPHA,
        sigma_cov: float = DEFAULT_SIGMA_COV,
        iou_thresh: float = 0.5,
        features_from: str = "ground_truth",
        seed: int = 0,
    ):
        self.qt_diameter = qt_diameter
        self.n_rounds = n_rounds
        self.n_thresholds = n_thresholds
        self.temporal_window = temporal_window
        self.neg_ratio = neg_ratio
        self.min_chunk_len = min_chunk_len
        self.break_patience = break_patience
        self.radius = radius
        self.alpha = alpha
        self.sigma_cov = sigma_cov
        self.iou_thresh = iou_thresh
        self.features_from = features_from
        self.seed = seed

    def _features(self, seq: SceneSequence) -> np.ndarray:
        if self.features_from == "ground_truth":
            frames: list[list[Detection]] = [[] for _ in range(len(seq))]
            for tr in seq.ground_truth or ():
                for d in tr.observations:
                    frames[d.frame].append(d)
        elif self.features_from == "detections":
            frames = [list(f) for f in seq.detections_by_frame]
        else:
            raise ValueError(f"features_from must be 'ground_truth' or 'detections', got {self.features_from!r}")
        return frame_features_batch(frames, seq.frame_width, seq.frame_height, self.alpha)

    def _learn_video(self, index: int, seq: SceneSequence) -> list[_ChunkResult]:
        name = seq.name or f"video{index}"
        chunks = segment(self._features(seq), self.min_chunk_len, self.break_patience, self.radius)
        out = []
        for c_idx, chunk in enumerate(chunks):
            gt = [
                Track(tr.id, obs)
                for tr in seq.ground_truth or ()
                if (obs := tuple(d for d in tr.observations if chunk.start <= d.frame <= chunk.end))
            ]
            pairs = (
                make_pairs(
                    gt,
                    seq.detections_by_frame,
                    self.temporal_window,
                    neg_ratio=self.neg_ratio,
                    seed=np.random.SeedSequence([self.seed, index, c_idx]),
                    iou_thresh=self.iou_thresh,
                )
                if gt
                else []
            )
            labels = {p.label for p in pairs}
            if labels != {-1, 1}:
                logger.warning("%s frames %d-%d: no usable positive/negative pairs, chunk skipped", name, chunk.start, chunk.end)
                continue
            params = adaboost_weights(pairs, self.n_rounds, self.n_thresholds, self.temporal_window, self.sigma_cov)
            out.append(_ChunkResult(name, chunk, params))
        return out

    def fit(self, X: Sequence[SceneSequence], y=None):
        sequences = [check_sequence(s, require_ground_truth=True) for s in X]
        results: list[_ChunkResult] = []
        self.skipped_videos_: list[str] = []
        for i, seq in enumerate(sequences):
            found = self._learn_video(i, seq)
            if not found:
                self.skipped_videos_.append(seq.name or f"video{i}")
                logger.warning("video %s produced no usable chunk and was skipped", seq.name or i)
            results.extend(found)
        self.chunks_ = results
        clusters = []
        if results:
            groups = qt_cluster([r.chunk.signature for r in results], self.qt_diameter)
            for cid, members in enumerate(groups, start=1):
                rs = [results[i] for i in members]
                clusters.append(
                    ClusterEntry(
                        cid,
                        ContextSignature.merge([r.chunk.signature for r in rs]),
                        cluster_params([(r.params, r.chunk.length) for r in rs]),
                        tuple((r.video, r.chunk.start, r.chunk.end, r.chunk.length) for r in rs),
                    )
                )
        self.database_ = LearnedDatabase(tuple(clusters), self.get_params())
        return self


def build_database(sequences: Sequence[SceneSequence], **config) -> LearnedDatabase:
    return ContextLearner(**config).fit(sequences).database_
