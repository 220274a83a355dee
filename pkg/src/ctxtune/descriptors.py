"""Link similarities between detections and per-track descriptor time series."""

from __future__ import annotations

import math
from collections import deque
from typing import Sequence

import numpy as np

from .model import N_DESCRIPTORS, Detection, Track

DEFAULT_SIGMA_COV = 1.0
DEFAULT_SERIES_WINDOW = 20
CV_MEAN_EPS = 1e-6


def _ratio_sim(a: float, b: float) -> float:
    lo, hi = (a, b) if a <= b else (b, a)
    return lo / hi


def link_similarity(k: int, a: Detection, b: Detection, sigma_cov: float = DEFAULT_SIGMA_COV) -> float:
    """Similarity in [0, 1] of descriptor ``k`` (1-based) between two detections.

    1 shape ratio, 2 area, 3 colour histogram, 4 colour covariance,
    5 dominant colour.
    """
    if k == 1:
        return _ratio_sim(a.bbox.h / a.bbox.w, b.bbox.h / b.bbox.w)
    if k == 2:
        return _ratio_sim(a.bbox.area, b.bbox.area)
    if k == 3:
        return min(1.0, float(np.minimum(a.appearance.hist_array, b.appearance.hist_array).sum()))
    if k == 4:
        dist = float(np.linalg.norm(a.appearance.cov_array - b.appearance.cov_array))
        return math.exp(-dist / sigma_cov)
    if k == 5:
        return min(1.0, float(np.minimum(a.appearance.dominant_array, b.appearance.dominant_array).sum()))
    raise ValueError(f"descriptor index must be in 1..{N_DESCRIPTORS}, got {k}")


class DetectionBatch:
    """Stacked descriptor arrays for a list of detections."""

    __slots__ = ("ratio", "area", "hist", "cov", "dom", "cx", "cy", "diag")

    def __init__(self, detections: Sequence[Detection]):
        n = len(detections)
        self.ratio = np.empty(n)
        self.area = np.empty(n)
        self.cx = np.empty(n)
        self.cy = np.empty(n)
        self.diag = np.empty(n)
        for i, d in enumerate(detections):
            b = d.bbox
            self.ratio[i] = b.h / b.w
            self.area[i] = b.w * b.h
            self.cx[i] = b.x + b.w / 2.0
            self.cy[i] = b.y + b.h / 2.0
            self.diag[i] = math.hypot(b.w, b.h)
        if n:
            self.hist = np.stack([d.appearance.hist_array for d in detections])
            self.cov = np.stack([d.appearance.cov_array.ravel() for d in detections])
            self.dom = np.stack([d.appearance.dominant_array for d in detections])
        else:
            self.hist = self.cov = self.dom = np.empty((0, 0))

    def __len__(self) -> int:
        return len(self.area)


def _ratio_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.minimum(a[:, None], b[None, :]) / np.maximum(a[:, None], b[None, :])


def similarity_matrix(a: DetectionBatch, b: DetectionBatch, sigma_cov: float = DEFAULT_SIGMA_COV) -> np.ndarray:
    """All five similarities between two batches, shape ``(5, len(a), len(b))``."""
    out = np.empty((N_DESCRIPTORS, len(a), len(b)))
    if len(a) == 0 or len(b) == 0:
        return out
    out[0] = _ratio_matrix(a.ratio, b.ratio)
    out[1] = _ratio_matrix(a.area, b.area)
    out[2] = np.minimum(a.hist[:, None, :], b.hist[None, :, :]).sum(axis=2)
    diff = a.cov[:, None, :] - b.cov[None, :, :]
    out[3] = np.exp(-np.sqrt((diff * diff).sum(axis=2)) / sigma_cov)
    out[4] = np.minimum(a.dom[:, None, :], b.dom[None, :, :]).sum(axis=2)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def paired_similarities(a: DetectionBatch, b: DetectionBatch, sigma_cov: float = DEFAULT_SIGMA_COV) -> np.ndarray:
    """Similarities of aligned pairs ``(a[i], b[i])``, shape ``(len(a), 5)``."""
    if len(a) != len(b):
        raise ValueError("paired batches must have equal length")
    out = np.empty((len(a), N_DESCRIPTORS))
    if len(a) == 0:
        return out
    out[:, 0] = np.minimum(a.ratio, b.ratio) / np.maximum(a.ratio, b.ratio)
    out[:, 1] = np.minimum(a.area, b.area) / np.maximum(a.area, b.area)
    out[:, 2] = np.minimum(a.hist, b.hist).sum(axis=1)
    out[:, 3] = np.exp(-np.linalg.norm(a.cov - b.cov, axis=1) / sigma_cov)
    out[:, 4] = np.minimum(a.dom, b.dom).sum(axis=1)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def series_cv(values: Sequence[float], eps: float = CV_MEAN_EPS) -> float:
    """Coefficient of variation (population std over mean) of a scalar series.

    Returns 0 when the mean is below ``eps``. Raises ``ValueError`` on fewer
    than two samples.
    """
    n = len(values)
    if n < 2:
        raise ValueError("coefficient of variation needs at least two samples")
    mean = math.fsum(values) / n
    if mean < eps:
        return 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return math.sqrt(var) / mean


class DescriptorSeries:
    """Rolling speed, direction-change, histogram and covariance series of one track.

    The histogram and covariance series hold the similarity between
    consecutive observations, which turns the vector descriptors into scalars.
    """

    __slots__ = ("speed", "direction", "histogram", "covariance", "window", "sigma_cov", "_last", "_last_step")

    def __init__(self, window: int = DEFAULT_SERIES_WINDOW, sigma_cov: float = DEFAULT_SIGMA_COV):
        if window < 2:
            raise ValueError("series window must hold at least two samples")
        self.window = window
        self.sigma_cov = sigma_cov
        self.speed: deque[float] = deque(maxlen=window)
        self.direction: deque[float] = deque(maxlen=window)
        self.histogram: deque[float] = deque(maxlen=window)
        self.covariance: deque[float] = deque(maxlen=window)
        self._last: Detection | None = None
        self._last_step: tuple[float, float] | None = None

    @property
    def series(self) -> tuple[deque[float], ...]:
        return (self.speed, self.direction, self.histogram, self.covariance)

    def update(self, det: Detection) -> DescriptorSeries:
        """Append one sample per series for a new observation of the track.

        The first observation only primes the buffers.
        """
        last = self._last
        self._last = det
        if last is None:
            return self
        gap = det.frame - last.frame
        if gap <= 0:
            raise ValueError(f"observation at frame {det.frame} does not follow frame {last.frame}")
        (x0, y0), (x1, y1) = last.bbox.center, det.bbox.center
        dx, dy = (x1 - x0) / gap, (y1 - y0) / gap
        self.speed.append(math.hypot(dx, dy))
        if dx or dy:
            if self._last_step is not None:
                px, py = self._last_step
                turn = abs(math.atan2(px * dy - py * dx, px * dx + py * dy))
                self.direction.append(turn)
            self._last_step = (dx, dy)
        self.histogram.append(link_similarity(3, last, det))
        self.covariance.append(link_similarity(4, last, det, self.sigma_cov))
        return self

    def error_terms(self) -> tuple[float, float, float, float]:
        """Per-series CV, 0 for series with fewer than two samples."""
        return tuple(series_cv(s) if len(s) >= 2 else 0.0 for s in self.series)  # type: ignore[return-value]


def update_series(track: Track, t: int, series: DescriptorSeries) -> DescriptorSeries:
    """Feed the observation of ``track`` at frame ``t`` into ``series``."""
    try:
        det = track.by_frame[t]
    except KeyError:
        raise ValueError(f"track {track.id} has no observation at frame {t}") from None
    return series.update(det)
