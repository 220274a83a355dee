"""Domain types shared by the tracker, the online evaluation and the learner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BBox

DESCRIPTOR_NAMES = ("shape_ratio", "area", "histogram", "covariance", "dominant_color")
N_DESCRIPTORS = len(DESCRIPTOR_NAMES)

DEFAULT_HIST_BINS = 16
DEFAULT_DOMINANT_COLORS = 3
_SUM_TOL = 1e-6
WEIGHT_SUM_TOL = 1e-8


def cov_matrix(upper: Sequence[float]) -> np.ndarray:
    """Expand ``(c00, c01, c02, c11, c12, c22)`` to a symmetric 3x3 matrix."""
    c00, c01, c02, c11, c12, c22 = upper
    return np.array([[c00, c01, c02], [c01, c11, c12], [c02, c12, c22]], dtype=float)


def cov_upper(m: np.ndarray) -> tuple[float, ...]:
    return (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])


@dataclass(frozen=True)
class Appearance:
    """Colour descriptors attached to a detection.

    ``histogram`` is a normalised colour histogram, ``covariance`` the upper
    triangle of a 3x3 colour covariance, ``dominant_colors`` a tuple of
    ``(bin index, weight)`` pairs and ``contrast`` the object/background
    contrast in [0, 1].
    """

    histogram: tuple[float, ...]
    covariance: tuple[float, ...]
    dominant_colors: tuple[tuple[int, float], ...]
    contrast: float = 0.5

    def __post_init__(self) -> None:
        hist = self.histogram
        if len(hist) == 0 or any(v < 0 or not math.isfinite(v) for v in hist):
            raise ValueError("histogram entries must be finite and non-negative")
        if abs(sum(hist) - 1.0) > _SUM_TOL:
            raise ValueError(f"histogram must sum to 1, got {sum(hist)!r}")
        if len(self.covariance) != 6:
            raise ValueError("covariance needs the 6 upper-triangle entries")
        eig = np.linalg.eigvalsh(cov_matrix(self.covariance))
        if eig[0] < -1e-9 * max(1.0, abs(eig[-1])):
            raise ValueError("covariance matrix is not positive semidefinite")
        if not self.dominant_colors:
            raise ValueError("at least one dominant color is required")
        total = 0.0
        for idx, wt in self.dominant_colors:
            if not 0 <= idx < len(hist):
                raise ValueError(f"dominant color index {idx} outside histogram range")
            if wt < 0:
                raise ValueError("dominant color weights must be non-negative")
            total += wt
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"dominant color weights must sum to 1, got {total!r}")
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError(f"contrast must lie in [0, 1], got {self.contrast!r}")

    @classmethod
    def neutral(cls, bins: int = DEFAULT_HIST_BINS) -> Appearance:
        """Uniform histogram, identity covariance, mid contrast."""
        hist = tuple([1.0 / bins] * bins)
        step = max(1, bins // DEFAULT_DOMINANT_COLORS)
        dom = tuple((i * step, 1.0 / DEFAULT_DOMINANT_COLORS) for i in range(DEFAULT_DOMINANT_COLORS))
        return cls(hist, (1.0, 0.0, 0.0, 1.0, 0.0, 1.0), dom, 0.5)

    @cached_property
    def hist_array(self) -> np.ndarray:
        return np.asarray(self.histogram, dtype=float)

    @cached_property
    def cov_array(self) -> np.ndarray:
        return cov_matrix(self.covariance)

    @cached_property
    def dominant_array(self) -> np.ndarray:
        """Dominant-colour weights scattered into a histogram-length vector."""
        out = np.zeros(len(self.histogram))
        for idx, wt in self.dominant_colors:
            out[idx] += wt
        return out


@dataclass(frozen=True, slots=True)
class Detection:
    frame: int
    bbox: BBox
    confidence: float = 1.0
    appearance: Appearance = field(default_factory=Appearance.neutral)

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError(f"frame index must be non-negative, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class Track:
    """Identity-labelled sequence of detections, at most one per frame."""

    id: int
    observations: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ValueError(f"track ids must be positive, got {self.id}")
        if not self.observations:
            raise ValueError(f"track {self.id} has no observations")
        frames = [d.frame for d in self.observations]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.id} frames must be strictly increasing")

    @classmethod
    def from_detections(cls, track_id: int, detections: Iterable[Detection]) -> Track:
        return cls(track_id, tuple(sorted(detections, key=lambda d: d.frame)))

    @cached_property
    def by_frame(self) -> Mapping[int, Detection]:
        return {d.frame: d for d in self.observations}

    @property
    def frames(self) -> list[int]:
        return [d.frame for d in self.observations]

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class SceneSequence:
    """Detections of one video plus optional ground truth."""

    frame_width: float
    frame_height: float
    fps: float
    detections_by_frame: tuple[tuple[Detection, ...], ...]
    ground_truth: tuple[Track, ...] | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if not (self.frame_width > 0 and self.frame_height > 0):
            raise ValueError("frame dimensions must be positive")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        for t, dets in enumerate(self.detections_by_frame):
            for d in dets:
                if d.frame != t:
                    raise ValueError(f"detection with frame {d.frame} filed under frame {t}")
                self._check_inside(d)
        if self.ground_truth is not None:
            ids = [tr.id for tr in self.ground_truth]
            if len(set(ids)) != len(ids):
                raise ValueError("ground-truth track ids must be unique")
            for tr in self.ground_truth:
                for d in tr.observations:
                    if d.frame >= len(self):
                        raise ValueError(f"ground truth frame {d.frame} beyond sequence length {len(self)}")
                    self._check_inside(d)

    def _check_inside(self, d: Detection) -> None:
        b, eps = d.bbox, 1e-6
        if b.x < -eps or b.y < -eps or b.x2 > self.frame_width + eps or b.y2 > self.frame_height + eps:
            raise ValueError(f"box {b} at frame {d.frame} leaves the {self.frame_width}x{self.frame_height} frame")

    def __len__(self) -> int:
        return len(self.detections_by_frame)

    @property
    def frame_area(self) -> float:
        return self.frame_width * self.frame_height

    @classmethod
    def from_detections(
        cls,
        detections: Iterable[Detection],
        *,
        frame_width: float,
        frame_height: float,
        fps: float = 25.0,
        length: int | None = None,
        ground_truth: Sequence[Track] | None = None,
        name: str = "",
    ) -> SceneSequence:
        dets = list(detections)
        n = max([d.frame + 1 for d in dets], default=0)
        if ground_truth:
            n = max(n, max(tr.observations[-1].frame + 1 for tr in ground_truth))
        if length is not None:
            if length < n:
                raise ValueError(f"length {length} shorter than the data ({n} frames)")
            n = length
        frames: list[list[Detection]] = [[] for _ in range(n)]
        for d in dets:
            frames[d.frame].append(d)
        return cls(
            frame_width,
            frame_height,
            fps,
            tuple(tuple(f) for f in frames),
            None if ground_truth is None else tuple(ground_truth),
            name,
        )


@dataclass(frozen=True)
class TrackerParams:
    """Descriptor weights of the tracker plus its temporal window.

    Weights are renormalised to sum to one on construction, unless they
    already do to within ``WEIGHT_SUM_TOL`` (which keeps weights read back
    from 9-digit files unchanged).
    """

    w: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    temporal_window: int = 10

    def __post_init__(self) -> None:
        w = tuple(float(v) for v in self.w)
        if len(w) != N_DESCRIPTORS:
            raise ValueError(f"expected {N_DESCRIPTORS} weights, got {len(w)}")
        if any(v < 0 or not math.isfinite(v) for v in w):
            raise ValueError(f"weights must be finite and non-negative, got {w}")
        total = math.fsum(w)
        if total <= 0:
            raise ValueError("at least one weight must be positive")
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            w = tuple(v / total for v in w)
        object.__setattr__(self, "w", w)
        if self.temporal_window < 1:
            raise ValueError("temporal window must be at least one frame")

    @classmethod
    def one_hot(cls, k: int, temporal_window: int = 10) -> TrackerParams:
        """Weights concentrated on descriptor ``k`` (1-based)."""
        w = [0.0] * N_DESCRIPTORS
        w[k - 1] = 1.0
        return cls(tuple(w), temporal_window)

    def with_weights(self, w: Sequence[float]) -> TrackerParams:
        return TrackerParams(tuple(w), self.temporal_window)
