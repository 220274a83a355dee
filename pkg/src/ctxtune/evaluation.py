"""Online tracking-quality evaluation on tracker output.

Per tracked object and frame this computes an interaction score (density of
the neighbourhood and occlusion at the current and previous frame) and an
error score (mean coefficient of variation of four descriptor series). A frame
raises an alarm when some object has both scores above ``th1`` and its error
score jumped by more than ``th2`` since its previous evaluation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .descriptors import (
    CV_MEAN_EPS,
    DEFAULT_SERIES_WINDOW,
    DEFAULT_SIGMA_COV,
    DescriptorSeries,
    DetectionBatch,
    paired_similarities,
)
from .geometry import BBox, cover_rect, intersection_area, union_area
from .model import Detection
from .validation import check_fraction

DEFAULT_NEIGHBOR_ALPHA = 1.5


@dataclass(frozen=True)
class EvalConfig:
    th1: float = 0.2
    th2: float = 0.15
    alpha: float = DEFAULT_NEIGHBOR_ALPHA

    def __post_init__(self) -> None:
        check_fraction(self.th1, "th1", open_low=True, open_high=True)
        check_fraction(self.th2, "th2", open_low=True, open_high=True)
        if not self.alpha > 0:
            raise ValueError("neighbour radius multiplier must be positive")


@dataclass(frozen=True, slots=True)
class QualityScores:
    frame: int
    track_id: int
    density: float
    occlusion_prev: float
    occlusion_now: float
    interaction: float
    error: float
    error_prev: float | None
    alarm: bool


def neighbors(o: Detection, others: Sequence[Detection], alpha: float = DEFAULT_NEIGHBOR_ALPHA) -> list[Detection]:
    """Detections whose centre lies within ``alpha`` mean diagonals of ``o``."""
    (ox, oy), od = o.bbox.center, o.bbox.diagonal
    out = []
    for d in others:
        cx, cy = d.bbox.center
        if math.hypot(cx - ox, cy - oy) <= alpha * (od + d.bbox.diagonal) / 2.0:
            out.append(d)
    return out


def density_score(o: Detection, neigh: Sequence[Detection]) -> float:
    """Union over covering-rectangle area of ``o`` and its neighbours; 0 when alone."""
    if not neigh:
        return 0.0
    boxes = [o.bbox, *(d.bbox for d in neigh)]
    return union_area(boxes) / cover_rect(boxes).area


def occlusion_pair(a: BBox, b: BBox) -> float:
    return min(1.0, intersection_area(a, b) / min(a.area, b.area))


def occlusion_level(o: Detection, neigh: Sequence[Detection]) -> float:
    return max((occlusion_pair(o.bbox, d.bbox) for d in neigh), default=0.0)


def interaction_score(density: float, occ_prev: float, occ_now: float) -> float:
    return (density + occ_prev + occ_now) / 3.0


def error_score(series: DescriptorSeries) -> float:
    """Mean of the four per-series CVs; series with < 2 samples count as 0."""
    return sum(series.error_terms()) / 4.0


def alarm(interaction: float, error: float, error_prev: float, cfg: EvalConfig = EvalConfig()) -> bool:
    return interaction > cfg.th1 and error > cfg.th1 and (error - error_prev) > cfg.th2


class _FrameBoxes:
    """Box arrays of one frame for vectorised neighbour/overlap queries."""

    __slots__ = ("ids", "boxes", "x1", "y1", "x2", "y2", "cx", "cy", "diag", "area")

    def __init__(self, items: Sequence[tuple[int, Detection]]):
        self.ids = np.array([tid for tid, _ in items], dtype=np.int64)
        self.boxes = [d.bbox for _, d in items]
        arr = np.array([(b.x, b.y, b.w, b.h) for b in self.boxes], dtype=float).reshape(-1, 4)
        self.x1, self.y1 = arr[:, 0], arr[:, 1]
        self.x2, self.y2 = arr[:, 0] + arr[:, 2], arr[:, 1] + arr[:, 3]
        self.cx, self.cy = self.x1 + arr[:, 2] / 2.0, self.y1 + arr[:, 3] / 2.0
        self.diag = np.hypot(arr[:, 2], arr[:, 3])
        self.area = arr[:, 2] * arr[:, 3]

    def neighbor_mask(self, other: _FrameBoxes, alpha: float) -> np.ndarray:
        dist = np.hypot(self.cx[:, None] - other.cx[None, :], self.cy[:, None] - other.cy[None, :])
        mask = dist <= alpha * 0.5 * (self.diag[:, None] + other.diag[None, :])
        mask &= self.ids[:, None] != other.ids[None, :]
        return mask

    def occlusion(self, other: _FrameBoxes, mask: np.ndarray) -> np.ndarray:
        iw = np.minimum(self.x2[:, None], other.x2[None, :]) - np.maximum(self.x1[:, None], other.x1[None, :])
        ih = np.minimum(self.y2[:, None], other.y2[None, :]) - np.maximum(self.y1[:, None], other.y1[None, :])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        pair = np.minimum(1.0, inter / np.minimum(self.area[:, None], other.area[None, :]))
        return np.where(mask, pair, 0.0).max(axis=1, initial=0.0)


class _RunningCV:
    """Coefficient of variation over the last ``window`` samples in O(1) per sample.

    Sums are kept relative to a reference sample, so a constant series has
    exactly zero spread, and are recomputed exactly once per window to stop drift.
    """

    __slots__ = ("values", "window", "ref", "s1", "s2", "since")

    def __init__(self, window: int):
        self.values: deque[float] = deque()
        self.window = window
        self.ref = 0.0
        self.s1 = self.s2 = 0.0
        self.since = 0

    def add(self, v: float) -> float:
        """Append ``v`` and return the coefficient of variation of the window."""
        values = self.values
        n = len(values)
        ref = self.ref
        if n == 0:
            ref = self.ref = v
        if n == self.window:
            old = values.popleft() - ref
            self.s1 -= old
            self.s2 -= old * old
        else:
            n += 1
        values.append(v)
        self.since += 1
        if self.since >= self.window:
            self.since = 0
            ref = self.ref = v
            s1 = self.s1 = math.fsum([x - ref for x in values])
            s2 = self.s2 = math.fsum([(x - ref) * (x - ref) for x in values])
        else:
            d = v - ref
            s1 = self.s1 = self.s1 + d
            s2 = self.s2 = self.s2 + d * d
        return self._cv(n, ref, s1, s2)

    def cv(self) -> float:
        return self._cv(len(self.values), self.ref, self.s1, self.s2)

    @staticmethod
    def _cv(n: int, ref: float, s1: float, s2: float) -> float:
        if n < 2:
            return 0.0
        shift = s1 / n
        mean = ref + shift
        if mean < CV_MEAN_EPS:
            return 0.0
        var = s2 / n - shift * shift
        return math.sqrt(var) / mean if var > 0.0 else 0.0


class _TrackSeries:
    """Running error-score state of one track; mirrors :class:`DescriptorSeries`."""

    __slots__ = ("speed", "direction", "histogram", "covariance", "frame", "cx", "cy", "step", "error", "last")

    def __init__(self, window: int):
        self.speed = _RunningCV(window)
        self.direction = _RunningCV(window)
        self.histogram = _RunningCV(window)
        self.covariance = _RunningCV(window)
        self.frame = -1
        self.cx = self.cy = 0.0
        self.step: tuple[float, float] | None = None
        self.error: float | None = None
        self.last: Detection | None = None

    def push(self, frame: int, cx: float, cy: float, hist_sim: float, cov_sim: float) -> float:
        """Record an observation; returns the error score after it."""
        if self.frame < 0:
            self.frame, self.cx, self.cy = frame, cx, cy
            return 0.0
        gap = frame - self.frame
        dx, dy = (cx - self.cx) / gap, (cy - self.cy) / gap
        total = self.speed.add(math.hypot(dx, dy))
        if dx or dy:
            if self.step is not None:
                px, py = self.step
                total += self.direction.add(abs(math.atan2(px * dy - py * dx, px * dx + py * dy)))
            else:
                total += self.direction.cv()
            self.step = (dx, dy)
        else:
            total += self.direction.cv()
        total += self.histogram.add(hist_sim) + self.covariance.add(cov_sim)
        self.frame, self.cx, self.cy = frame, cx, cy
        return total / 4.0


class OnlineEvaluator:
    """Frame-by-frame quality scoring of tracker output.

    Feed frames in order with the ``(track id, detection)`` pairs the tracker
    produced for that frame, either through :meth:`evaluate` (all scores) or
    :meth:`check` (alarm only; interaction scores are computed just for the
    tracks whose error score could raise an alarm). ``link_sims`` may pass the
    histogram and covariance similarities of each detection to its track's
    previous observation, as already computed by the tracker; rows of NaN mark
    new tracks.
    """

    def __init__(
        self,
        config: EvalConfig = EvalConfig(),
        series_window: int = DEFAULT_SERIES_WINDOW,
        sigma_cov: float = DEFAULT_SIGMA_COV,
        forget_after: int = 100,
    ):
        self.config = config
        self.series_window = series_window
        self.sigma_cov = sigma_cov
        self.forget_after = forget_after
        self._series: dict[int, _TrackSeries] = {}
        self._prev_items: Sequence[tuple[int, Detection]] = ()
        self._prev_boxes: _FrameBoxes | None = None
        self._prev_frame = -1

    def _advance(
        self, frame: int, items: Sequence[tuple[int, Detection]], link_sims: np.ndarray | None
    ) -> tuple[list[float], list[float | None]]:
        if frame <= self._prev_frame:
            raise ValueError(f"frame {frame} evaluated after frame {self._prev_frame}")
        all_series = self._series
        tracks = []
        for tid, _ in items:
            ts = all_series.get(tid)
            if ts is None:
                ts = all_series[tid] = _TrackSeries(self.series_window)
            tracks.append(ts)
        sims = self._link_sims(tracks, items) if link_sims is None else link_sims.tolist()
        err, err_prev = [], []
        for ts, (_, det), (hs, cs) in zip(tracks, items, sims):
            b = det.bbox
            e = ts.push(frame, b.x + b.w / 2.0, b.y + b.h / 2.0, hs, cs)
            err_prev.append(ts.error)
            err.append(e)
            ts.error = e
            ts.last = det
        return err, err_prev

    def _link_sims(self, tracks: list[_TrackSeries], items: Sequence[tuple[int, Detection]]) -> list[list[float]]:
        out = np.full((len(items), 2), np.nan)
        known = [i for i, ts in enumerate(tracks) if ts.last is not None]
        if known:
            prev = DetectionBatch([tracks[i].last for i in known])
            cur = DetectionBatch([items[i][1] for i in known])
            out[known] = paired_similarities(prev, cur, self.sigma_cov)[:, 2:4]
        return out.tolist()

    def _interaction(
        self, frame: int, items: Sequence[tuple[int, Detection]], rows: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Density, previous-frame and current occlusion for the selected rows."""
        m = len(rows)
        density, occ_prev, occ_now = np.zeros(m), np.zeros(m), np.zeros(m)
        if m == 0:
            return density, occ_prev, occ_now
        cfg = self.config
        cur = _FrameBoxes(items)
        sub = _FrameBoxes([items[i] for i in rows])
        if len(items) > 1:
            mask = sub.neighbor_mask(cur, cfg.alpha)
            occ_now = sub.occlusion(cur, mask)
            for r in np.flatnonzero(mask.any(axis=1)):
                group = [sub.boxes[r], *(cur.boxes[j] for j in np.flatnonzero(mask[r]))]
                density[r] = union_area(group) / cover_rect(group).area
        if self._prev_frame == frame - 1 and self._prev_items:
            if self._prev_boxes is None:
                self._prev_boxes = _FrameBoxes(self._prev_items)
            prev = self._prev_boxes
            occ_prev = sub.occlusion(prev, sub.neighbor_mask(prev, cfg.alpha))
        return density, occ_prev, occ_now

    def _finish(self, frame: int, items: Sequence[tuple[int, Detection]]) -> None:
        if frame % self.forget_after == 0:
            stale = [tid for tid, ts in self._series.items() if frame - ts.frame > self.forget_after]
            for tid in stale:
                del self._series[tid]
        self._prev_items = items
        self._prev_boxes = None
        self._prev_frame = frame

    def _is_candidate(self, err: float, err_prev: float | None) -> bool:
        cfg = self.config
        return err_prev is not None and err > cfg.th1 and (err - err_prev) > cfg.th2

    def check(
        self, frame: int, items: Sequence[tuple[int, Detection]], link_sims: np.ndarray | None = None
    ) -> bool:
        """Whether the frame raises an alarm."""
        err, err_prev = self._advance(frame, items, link_sims)
        rows = [i for i, (e, p) in enumerate(zip(err, err_prev)) if self._is_candidate(e, p)]
        hit = False
        if rows:
            density, occ_prev, occ_now = self._interaction(frame, items, np.array(rows))
            inter = (density + occ_prev + occ_now) / 3.0
            hit = bool((inter > self.config.th1).any())
        self._finish(frame, items)
        return hit

    def evaluate(
        self, frame: int, items: Sequence[tuple[int, Detection]], link_sims: np.ndarray | None = None
    ) -> tuple[bool, list[QualityScores]]:
        """Alarm flag and the scores of every tracked object in the frame."""
        err, err_prev = self._advance(frame, items, link_sims)
        density, occ_prev, occ_now = self._interaction(frame, items, np.arange(len(items)))
        inter = (density + occ_prev + occ_now) / 3.0
        scores = []
        for i, (tid, _) in enumerate(items):
            hit = self._is_candidate(err[i], err_prev[i]) and bool(inter[i] > self.config.th1)
            scores.append(
                QualityScores(
                    frame, tid, float(density[i]), float(occ_prev[i]), float(occ_now[i]),
                    float(inter[i]), err[i], err_prev[i], hit,
                )
            )
        self._finish(frame, items)
        return any(sc.alarm for sc in scores), scores
