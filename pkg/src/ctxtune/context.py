"""Scene-context features, code-book modelling, segmentation and context distance.

A frame is summarised by six values in [0, 1]: object density, occlusion
level, mean contrast, contrast variance, mean 2D area and area variance. A run
of frames is summarised by one code-book per feature; the distance from a
window of frames to a code-book set is the fraction of window values that no
code-word covers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .evaluation import DEFAULT_NEIGHBOR_ALPHA
from .model import Detection, SceneSequence
from .validation import check_sequence

N_FEATURES = 6
FEATURE_NAMES = ("density", "occlusion", "contrast", "contrast_variance", "area", "area_variance")
DEFAULT_RADIUS = 0.1
DEFAULT_MIN_CHUNK_LEN = 50
DEFAULT_BREAK_PATIENCE = 5
MIN_MATCHING_FEATURES = 3
# largest population variance of a variable confined to [0, 1]
_MAX_UNIT_VARIANCE = 0.25


class ContextFrameVector(NamedTuple):
    density: float
    occlusion: float
    contrast: float
    contrast_variance: float
    area: float
    area_variance: float


def _occlusion_levels(detections: Sequence[Detection], alpha: float) -> np.ndarray:
    n = len(detections)
    if n < 2:
        return np.zeros(n)
    arr = np.array([(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h) for d in detections])
    x1, y1, w, h = arr.T
    x2, y2 = x1 + w, y1 + h
    cx, cy, diag, area = x1 + w / 2, y1 + h / 2, np.hypot(w, h), w * h
    dist = np.hypot(cx[:, None] - cx[None, :], cy[:, None] - cy[None, :])
    mask = dist <= alpha * 0.5 * (diag[:, None] + diag[None, :])
    np.fill_diagonal(mask, False)
    iw = np.clip(np.minimum(x2[:, None], x2[None, :]) - np.maximum(x1[:, None], x1[None, :]), 0, None)
    ih = np.clip(np.minimum(y2[:, None], y2[None, :]) - np.maximum(y1[:, None], y1[None, :]), 0, None)
    pair = np.minimum(1.0, iw * ih / np.minimum(area[:, None], area[None, :]))
    return np.where(mask, pair, 0.0).max(axis=1)


def frame_features(
    detections: Sequence[Detection],
    frame_width: float,
    frame_height: float,
    alpha: float = DEFAULT_NEIGHBOR_ALPHA,
    occlusion: Sequence[float] | None = None,
) -> ContextFrameVector:
    """Six context features of one frame; all zeros for an empty frame.

    ``occlusion`` may carry precomputed per-detection occlusion levels.
    """
    if not detections:
        return ContextFrameVector(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    frame_area = frame_width * frame_height
    areas = np.array([d.bbox.area for d in detections]) / frame_area
    contrasts = np.array([d.appearance.contrast for d in detections])
    occ = _occlusion_levels(detections, alpha) if occlusion is None else np.asarray(occlusion)
    return ContextFrameVector(
        min(1.0, float(areas.sum())),
        float(np.clip(occ.mean(), 0.0, 1.0)),
        float(np.clip(contrasts.mean(), 0.0, 1.0)),
        min(1.0, float(contrasts.var()) / _MAX_UNIT_VARIANCE),
        min(1.0, float(areas.mean())),
        min(1.0, float(areas.var()) / _MAX_UNIT_VARIANCE),
    )


def frame_features_batch(
    frames: Sequence[Sequence[Detection]],
    frame_width: float,
    frame_height: float,
    alpha: float = DEFAULT_NEIGHBOR_ALPHA,
) -> np.ndarray:
    """:func:`frame_features` of many frames at once, shape ``(len(frames), 6)``."""
    n_frames = len(frames)
    out = np.zeros((n_frames, N_FEATURES))
    width = max((len(f) for f in frames), default=0)
    if width == 0:
        return out
    arr = np.zeros((n_frames, width, 5))
    valid = np.zeros((n_frames, width), dtype=bool)
    for i, dets in enumerate(frames):
        if dets:
            arr[i, : len(dets)] = [(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.appearance.contrast) for d in dets]
            valid[i, : len(dets)] = True
    x1, y1, w, h, contrast = np.moveaxis(arr, 2, 0)
    x2, y2 = x1 + w, y1 + h
    cx, cy, diag, area = x1 + w / 2, y1 + h / 2, np.hypot(w, h), w * h
    dist = np.hypot(cx[:, :, None] - cx[:, None, :], cy[:, :, None] - cy[:, None, :])
    mask = dist <= alpha * 0.5 * (diag[:, :, None] + diag[:, None, :])
    mask &= valid[:, :, None] & valid[:, None, :]
    mask &= ~np.eye(width, dtype=bool)
    iw = np.clip(np.minimum(x2[:, :, None], x2[:, None, :]) - np.maximum(x1[:, :, None], x1[:, None, :]), 0, None)
    ih = np.clip(np.minimum(y2[:, :, None], y2[:, None, :]) - np.maximum(y1[:, :, None], y1[:, None, :]), 0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        pair = np.minimum(1.0, iw * ih / np.minimum(area[:, :, None], area[:, None, :]))
    occ = np.where(mask, pair, 0.0).max(axis=2)

    counts = valid.sum(axis=1)
    nonempty = counts > 0
    safe = np.maximum(counts, 1)
    areas = np.where(valid, area / (frame_width * frame_height), 0.0)
    contrast = np.where(valid, contrast, 0.0)
    area_mean = areas.sum(axis=1) / safe
    contrast_mean = contrast.sum(axis=1) / safe
    area_var = np.where(valid, (areas - area_mean[:, None]) ** 2, 0.0).sum(axis=1) / safe
    contrast_var = np.where(valid, (contrast - contrast_mean[:, None]) ** 2, 0.0).sum(axis=1) / safe
    out[:, 0] = np.minimum(1.0, areas.sum(axis=1))
    out[:, 1] = np.clip(occ.sum(axis=1) / safe, 0.0, 1.0)
    out[:, 2] = np.clip(contrast_mean, 0.0, 1.0)
    out[:, 3] = np.minimum(1.0, contrast_var / _MAX_UNIT_VARIANCE)
    out[:, 4] = np.minimum(1.0, area_mean)
    out[:, 5] = np.minimum(1.0, area_var / _MAX_UNIT_VARIANCE)
    out[~nonempty] = 0.0
    return out


@dataclass(frozen=True, slots=True)
class CodeWord:
    center: float
    radius: float
    count: int = 1

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("code-word count must be positive")
        if not self.radius > 0:
            raise ValueError("code-word radius must be positive")


def _nearest(book: Sequence[CodeWord], value: float) -> int:
    best, best_d = -1, float("inf")
    for i, word in enumerate(book):
        d = abs(value - word.center)
        if d < best_d:
            best, best_d = i, d
    return best


def codebook_update(book: Sequence[CodeWord], value: float, radius: float = DEFAULT_RADIUS) -> list[CodeWord]:
    """Absorb ``value`` into its nearest code-word if covered, else open a new word."""
    out = list(book)
    i = _nearest(out, value)
    if i >= 0 and abs(value - out[i].center) <= out[i].radius:
        w = out[i]
        out[i] = CodeWord(w.center + (value - w.center) / (w.count + 1), w.radius, w.count + 1)
    else:
        out.append(CodeWord(value, radius, 1))
    return out


def _covered(book: Sequence[CodeWord], values: np.ndarray) -> np.ndarray:
    if not book or values.size == 0:
        return np.zeros(values.shape, dtype=bool)
    centers = np.array([w.center for w in book])
    radii = np.array([w.radius for w in book])
    return (np.abs(values[:, None] - centers[None, :]) <= radii[None, :]).any(axis=1)


@dataclass(frozen=True)
class ContextSignature:
    """Six code-books summarising a run of frames.

    ``vectors`` keeps the raw per-frame feature rows when the signature was
    built from data; signatures loaded from disk carry an empty array.
    """

    books: tuple[tuple[CodeWord, ...], ...]
    frame_count: int
    vectors: np.ndarray = field(default_factory=lambda: np.empty((0, N_FEATURES)), compare=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.books) != N_FEATURES:
            raise ValueError(f"a signature needs {N_FEATURES} code-books")
        for f, book in enumerate(self.books):
            if sum(w.count for w in book) != self.frame_count:
                raise ValueError(f"code-book {FEATURE_NAMES[f]} counts do not sum to {self.frame_count}")

    @classmethod
    def from_vectors(cls, vectors, radius: float = DEFAULT_RADIUS) -> ContextSignature:
        rows = np.asarray(vectors, dtype=float).reshape(-1, N_FEATURES)
        books = []
        for f in range(N_FEATURES):
            book: list[CodeWord] = []
            for v in rows[:, f]:
                book = codebook_update(book, float(v), radius)
            books.append(tuple(book))
        return cls(tuple(books), len(rows), rows)

    @classmethod
    def merge(cls, signatures: Sequence[ContextSignature]) -> ContextSignature:
        """Union of code-words; words with identical centre and radius pool their counts."""
        books = []
        for f in range(N_FEATURES):
            pooled: dict[tuple[float, float], int] = {}
            for sig in signatures:
                for w in sig.books[f]:
                    pooled[(w.center, w.radius)] = pooled.get((w.center, w.radius), 0) + w.count
            books.append(tuple(CodeWord(c, r, n) for (c, r), n in sorted(pooled.items())))
        vectors = np.concatenate([s.vectors for s in signatures]) if signatures else np.empty((0, N_FEATURES))
        return cls(tuple(books), sum(s.frame_count for s in signatures), vectors)

    def n_matching(self, vector: Sequence[float]) -> int:
        """Number of features of ``vector`` covered by a code-word."""
        return sum(
            1 for f, v in enumerate(vector) if any(abs(v - w.center) <= w.radius for w in self.books[f])
        )

    def to_dict(self) -> dict:
        return {
            "books": [[{"c": w.center, "r": w.radius, "n": w.count} for w in book] for book in self.books],
            "frames": self.frame_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ContextSignature:
        books = tuple(tuple(CodeWord(float(w["c"]), float(w["r"]), int(w["n"])) for w in book) for book in data["books"])
        return cls(books, int(data["frames"]))


def context_distance(window: ContextSignature, cluster: ContextSignature) -> float:
    """Fraction of the window's raw feature values not covered by ``cluster``'s code-words."""
    rows = window.vectors
    if rows.shape[0] == 0:
        raise ValueError("context_distance needs a signature that keeps its raw frame vectors")
    matched = sum(int(_covered(cluster.books[f], rows[:, f]).sum()) for f in range(N_FEATURES))
    return 1.0 - matched / (N_FEATURES * rows.shape[0])


def symmetric_context_distance(a: ContextSignature, b: ContextSignature) -> float:
    return max(context_distance(a, b), context_distance(b, a))


@dataclass(frozen=True)
class ContextChunk:
    start: int
    end: int
    signature: ContextSignature

    @property
    def length(self) -> int:
        return self.end - self.start + 1


def _boundaries(rows: np.ndarray, break_patience: int, radius: float) -> list[int]:
    """Start frames of stable-context runs."""
    starts = [0]
    books: list[list[CodeWord]] = [[] for _ in range(N_FEATURES)]
    pending: list[int] = []

    def absorb(t: int) -> None:
        for f in range(N_FEATURES):
            books[f] = codebook_update(books[f], float(rows[t, f]), radius)

    for t in range(len(rows)):
        if t == starts[-1]:
            absorb(t)
            continue
        hits = sum(
            1 for f in range(N_FEATURES) if any(abs(rows[t, f] - w.center) <= w.radius for w in books[f])
        )
        if hits >= MIN_MATCHING_FEATURES:
            for p in pending:
                absorb(p)
            pending.clear()
            absorb(t)
            continue
        pending.append(t)
        if len(pending) >= break_patience:
            starts.append(pending[0])
            books = [[] for _ in range(N_FEATURES)]
            for p in pending:
                absorb(p)
            pending.clear()
    return starts


def segment(
    vectors,
    min_chunk_len: int = DEFAULT_MIN_CHUNK_LEN,
    break_patience: int = DEFAULT_BREAK_PATIENCE,
    radius: float = DEFAULT_RADIUS,
    offset: int = 0,
) -> list[ContextChunk]:
    """Cut a feature sequence into consecutive chunks of stable context.

    A chunk ends when fewer than three features match its code-books for
    ``break_patience`` consecutive frames. Chunks shorter than
    ``min_chunk_len`` are merged into their predecessor (the first one into its
    successor). ``offset`` shifts the reported frame numbers.
    """
    rows = np.asarray(vectors, dtype=float).reshape(-1, N_FEATURES)
    if len(rows) == 0:
        raise ValueError("cannot segment an empty sequence")
    starts = _boundaries(rows, break_patience, radius)
    spans = [[s, e - 1] for s, e in zip(starts, [*starts[1:], len(rows)])]
    merged: list[list[int]] = []
    for span in spans:
        if merged and span[1] - span[0] + 1 < min_chunk_len:
            merged[-1][1] = span[1]
        elif merged and merged[-1][1] - merged[-1][0] + 1 < min_chunk_len:
            merged[-1][1] = span[1]
        else:
            merged.append(span)
    return [
        ContextChunk(s + offset, e + offset, ContextSignature.from_vectors(rows[s : e + 1], radius)) for s, e in merged
    ]


def window_signature(
    frames: Sequence[Sequence[Detection]],
    frame_width: float,
    frame_height: float,
    radius: float = DEFAULT_RADIUS,
    alpha: float = DEFAULT_NEIGHBOR_ALPHA,
) -> ContextSignature:
    """Signature of a window of frames (pass the last ``n`` frames)."""
    if not frames:
        raise ValueError("window_signature needs at least one frame")
    return ContextSignature.from_vectors(frame_features_batch(frames, frame_width, frame_height, alpha), radius)


class ContextFeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn a :class:`SceneSequence` into its ``(n_frames, 6)`` context-feature matrix."""

    def __init__(self, alpha: float = DEFAULT_NEIGHBOR_ALPHA):
        self.alpha = alpha

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: SceneSequence) -> np.ndarray:
        seq = check_sequence(X)
        return frame_features_batch(seq.detections_by_frame, seq.frame_width, seq.frame_height, self.alpha)
