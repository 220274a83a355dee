"""Synthetic scenes: scripted object paths observed through a noisy detector.

A :class:`ScenarioSpec` lists objects (waypoint paths, sizes, appearance
prototypes) and a schedule of regimes, each with its own detector noise.
:func:`generate` turns it into a :class:`SceneSequence` with ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import BBox
from .io import quantize
from .model import DEFAULT_DOMINANT_COLORS, DEFAULT_HIST_BINS, Appearance, Detection, SceneSequence, Track, cov_matrix

_COV_FLOOR = 1e-3
_CONTRAST_NOISE = 0.02


@dataclass
class ObjectSpec:
    """One scripted object.

    ``waypoints`` are ``(frame, cx, cy)`` centre positions, linearly
    interpolated; the object exists from the first to the last waypoint frame.
    """

    waypoints: list[tuple[int, float, float]]
    size: tuple[float, float]
    histogram: list[float]
    covariance: list[float]
    contrast: float = 0.5

    def __post_init__(self) -> None:
        self.waypoints = [(int(f), float(x), float(y)) for f, x, y in self.waypoints]
        self.size = (float(self.size[0]), float(self.size[1]))
        self.histogram = [float(v) for v in self.histogram]
        self.covariance = [float(v) for v in self.covariance]
        frames = [f for f, _, _ in self.waypoints]
        if not frames or any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("waypoint frames must be non-empty and strictly increasing")
        if not (self.size[0] > 0 and self.size[1] > 0):
            raise ValueError("object size must be positive")
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError("contrast must lie in [0, 1]")
        if abs(sum(self.histogram) - 1.0) > 1e-6 or min(self.histogram) < 0:
            raise ValueError("histogram prototype must be a distribution")
        if len(self.covariance) != 6:
            raise ValueError("covariance prototype needs 6 upper-triangle entries")

    @property
    def first(self) -> int:
        return self.waypoints[0][0]

    @property
    def last(self) -> int:
        return self.waypoints[-1][0]

    def center(self, t: int) -> tuple[float, float]:
        wps = self.waypoints
        if t <= wps[0][0]:
            return wps[0][1], wps[0][2]
        for (f0, x0, y0), (f1, x1, y1) in zip(wps, wps[1:]):
            if f0 <= t <= f1:
                a = (t - f0) / (f1 - f0)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        return wps[-1][1], wps[-1][2]


@dataclass
class RegimeSpec:
    """Detector noise over frames ``[start, end)``."""

    start: int
    end: int
    appearance_noise: float = 0.0
    size_noise: float = 0.0
    miss_rate: float = 0.0
    bbox_jitter: float = 0.0
    name: str = ""
    width_noise: float = 0.0  # extra log-scale noise on box width alone

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("regime must span at least one frame")
        for key in ("appearance_noise", "miss_rate"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1]")
        if min(self.size_noise, self.width_noise, self.bbox_jitter) < 0:
            raise ValueError("noise scales must be non-negative")


@dataclass
class ScenarioSpec:
    width: float
    height: float
    duration: int
    objects: list[ObjectSpec]
    regimes: list[RegimeSpec]
    fps: float = 25.0
    seed: int = 0
    name: str = "scenario"
    hist_bins: int = DEFAULT_HIST_BINS
    dominant_colors: int = DEFAULT_DOMINANT_COLORS

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("duration must be at least one frame")
        spans = sorted((r.start, r.end) for r in self.regimes)
        if not spans or spans[0][0] != 0 or spans[-1][1] != self.duration:
            raise ValueError("regimes must tile [0, duration)")
        if any(a[1] != b[0] for a, b in zip(spans, spans[1:])):
            raise ValueError("regimes must tile [0, duration) without gaps or overlaps")
        for obj in self.objects:
            if len(obj.histogram) != self.hist_bins:
                raise ValueError(f"object histograms need {self.hist_bins} bins")

    def regime_at(self, t: int) -> RegimeSpec:
        for r in self.regimes:
            if r.start <= t < r.end:
                return r
        raise IndexError(t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioSpec:
        data = dict(data)
        data["objects"] = [ObjectSpec(**o) for o in data.get("objects", [])]
        data["regimes"] = [RegimeSpec(**r) for r in data.get("regimes", [])]
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> ScenarioSpec:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")


def _dominant(hist: np.ndarray, k: int) -> tuple[tuple[int, float], ...]:
    order = sorted(range(len(hist)), key=lambda i: (-hist[i], i))[:k]
    weights = np.array([hist[i] for i in order])
    if weights.sum() <= 0:
        weights = np.ones(k)
    weights = weights / weights.sum()
    q = [quantize(float(w)) for w in weights[:-1]]
    q.append(quantize(1.0 - math.fsum(q)))
    return tuple(zip(order, q))


def _normalized(hist: np.ndarray) -> tuple[float, ...]:
    hist = np.clip(hist, 0.0, None)
    hist = hist / hist.sum()
    q = [quantize(float(v)) for v in hist]
    return tuple(q)


def _psd(upper: np.ndarray) -> tuple[float, ...]:
    m = cov_matrix(upper)
    vals, vecs = np.linalg.eigh(m)
    m = (vecs * np.clip(vals, _COV_FLOOR, None)) @ vecs.T
    return tuple(quantize(float(v)) for v in (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2]))


def _appearance(obj: ObjectSpec, hist: np.ndarray, cov: np.ndarray, contrast: float, k: int) -> Appearance:
    h = np.asarray(_normalized(hist))
    return Appearance(_normalized(hist), _psd(cov), _dominant(h, k), quantize(min(1.0, max(0.0, contrast))))


def _clip_box(cx: float, cy: float, w: float, h: float, width: float, height: float) -> BBox | None:
    x1, y1 = max(0.0, cx - w / 2), max(0.0, cy - h / 2)
    x2, y2 = min(width, cx + w / 2), min(height, cy + h / 2)
    x1, y1, x2, y2 = (quantize(v) for v in (x1, y1, x2, y2))
    if x2 - x1 < 1.0 or y2 - y1 < 1.0:
        return None
    return BBox(x1, y1, quantize(x2 - x1), quantize(y2 - y1))


def generate(spec: ScenarioSpec) -> SceneSequence:
    """Render a scenario into detections and ground truth; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    k = spec.dominant_colors
    frames: list[list[Detection]] = [[] for _ in range(spec.duration)]
    gt: dict[int, list[Detection]] = {}
    protos = [
        (np.asarray(o.histogram, dtype=float), np.asarray(o.covariance, dtype=float)) for o in spec.objects
    ]
    gt_app = [_appearance(o, h, c, o.contrast, k) for o, (h, c) in zip(spec.objects, protos)]
    for t in range(spec.duration):
        regime = spec.regime_at(t)
        for idx, obj in enumerate(spec.objects):
            if not obj.first <= t <= obj.last:
                continue
            cx, cy = obj.center(t)
            w, h = obj.size
            box = _clip_box(cx, cy, w, h, spec.width, spec.height)
            if box is None:
                continue
            gt.setdefault(idx + 1, []).append(Detection(t, box, 1.0, gt_app[idx]))
            # fixed number of draws per visible object keeps the stream aligned
            u_miss = rng.random()
            jitter = rng.normal(0.0, 1.0, 2) * regime.bbox_jitter
            scale = np.exp(rng.normal(0.0, 1.0, 2) * regime.size_noise)
            scale[0] *= math.exp(rng.normal(0.0, 1.0) * regime.width_noise)
            mix = rng.dirichlet(np.ones(spec.hist_bins))
            cov_noise = rng.normal(0.0, 1.0, 6)
            c_noise = rng.normal(0.0, _CONTRAST_NOISE)
            if u_miss < regime.miss_rate:
                continue
            dbox = _clip_box(cx + jitter[0], cy + jitter[1], w * scale[0], h * scale[1], spec.width, spec.height)
            if dbox is None:
                continue
            a = regime.appearance_noise
            hist_proto, cov_proto = protos[idx]
            cov_scale = max(abs(cov_proto[[0, 3, 5]]).max(), _COV_FLOOR)
            app = _appearance(
                obj,
                (1.0 - a) * hist_proto + a * mix,
                cov_proto + a * cov_scale * cov_noise,
                obj.contrast + c_noise if a > 0 else obj.contrast,
                k,
            )
            frames[t].append(Detection(t, dbox, 1.0, app))
    tracks = tuple(Track(tid, tuple(obs)) for tid, obs in sorted(gt.items()))
    return SceneSequence(
        spec.width, spec.height, spec.fps, tuple(tuple(f) for f in frames), tracks, spec.name
    )


# -- presets ----------------------------------------------------------------------


def _peaked_histogram(rng: np.random.Generator, bins: int, peaks: list[int], mass: float = 0.85) -> list[float]:
    hist = np.full(bins, (1.0 - mass) / bins)
    share = rng.dirichlet(np.full(len(peaks), 4.0)) * mass
    for p, s in zip(peaks, share):
        hist[p] += s
    hist /= hist.sum()
    return [float(v) for v in hist]


def _random_cov(rng: np.random.Generator, base: np.ndarray | None = None, spread: float = 0.6) -> list[float]:
    if base is None:
        a = rng.normal(0.0, spread, (3, 3))
        m = a @ a.T + 0.2 * np.eye(3)
    else:
        m = cov_matrix(base) + np.diag(rng.uniform(0.0, 0.02, 3))
    return [float(v) for v in (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])]


@dataclass
class _Population:
    """Parameters of the objects a preset populates its interval with."""

    concurrent: int
    speed: tuple[float, float]
    band: tuple[float, float]  # vertical band of lanes, as fractions of the frame height
    size: Callable[[np.random.Generator, int], tuple[float, float]]
    appearance: Callable[[np.random.Generator, int], tuple[list[float], list[float]]]
    contrast: Callable[[np.random.Generator, int], float]
    lateral: float = 0.0  # vertical drift amplitude in pixels


def _walkers(
    rng: np.random.Generator, pop: _Population, start: int, end: int, width: float, height: float
) -> list[ObjectSpec]:
    """Objects crossing the frame horizontally, keeping ``pop.concurrent`` alive.

    Objects present at ``start`` begin mid-walk; all are cut at ``end``.
    """
    objects: list[ObjectSpec] = []
    serial = 0

    def spawn(t0: int, mid_walk: bool) -> None:
        nonlocal serial
        w, h = pop.size(rng, serial)
        hist, cov = pop.appearance(rng, serial)
        contrast = pop.contrast(rng, serial)
        speed = rng.uniform(*pop.speed)
        direction = 1 if rng.random() < 0.5 else -1
        y = rng.uniform(pop.band[0], pop.band[1]) * height
        y = min(max(y, h / 2 + 1), height - h / 2 - 1)
        x_from, x_to = (w / 2 + 1, width - w / 2 - 1)
        if direction < 0:
            x_from, x_to = x_to, x_from
        if mid_walk:
            x_from = rng.uniform(w / 2 + 1, width - w / 2 - 1)
        dur = max(2, int(abs(x_to - x_from) / speed))
        t1 = min(t0 + dur, end - 1)
        x1 = x_from + (x_to - x_from) * (t1 - t0) / dur
        dy = rng.uniform(-pop.lateral, pop.lateral)
        y1 = min(max(y + dy, h / 2 + 1), height - h / 2 - 1)
        if t1 > t0:
            objects.append(ObjectSpec([(t0, x_from, y), (t1, x1, y1)], (w, h), hist, cov, contrast))
        serial += 1

    for _ in range(pop.concurrent):
        spawn(start, True)
    for t in range(start + 1, end - 1):
        alive = sum(1 for o in objects if o.first <= t <= o.last)
        for _ in range(pop.concurrent - alive):
            spawn(t, False)
    return objects


def _appearance_stable(rng: np.random.Generator, bins: int) -> _Population:
    def size(r: np.random.Generator, i: int) -> tuple[float, float]:
        return (float(r.uniform(30, 34)), float(r.uniform(78, 86)))

    def appearance(r: np.random.Generator, i: int) -> tuple[list[float], list[float]]:
        peaks = list(r.choice(bins, size=2, replace=False))
        return _peaked_histogram(r, bins, peaks), _random_cov(r)

    def contrast(r: np.random.Generator, i: int) -> float:
        return float(r.uniform(0.75, 0.85))

    return _Population(6, (1.5, 3.0), (0.3, 0.7), size, appearance, contrast, lateral=30.0)


def _size_stable(rng: np.random.Generator, bins: int) -> _Population:
    base_hist = _peaked_histogram(rng, bins, list(rng.choice(bins, size=3, replace=False)), mass=0.5)
    base_cov = np.asarray(_random_cov(rng))

    # consecutive spawns cycle through well-separated sizes and aspect ratios
    ladder = [(64.0 * 1.14**j, 0.35 if j % 2 else 0.6) for j in range(8)]
    offset = int(rng.integers(len(ladder)))

    def size(r: np.random.Generator, i: int) -> tuple[float, float]:
        h, aspect = ladder[(i + offset) % len(ladder)]
        h *= float(r.uniform(0.98, 1.02))
        return (h * aspect, h)

    def appearance(r: np.random.Generator, i: int) -> tuple[list[float], list[float]]:
        hist = np.asarray(base_hist) + r.uniform(0.0, 0.01, bins)
        return [float(v) for v in hist / hist.sum()], _random_cov(r, base_cov)

    def contrast(r: np.random.Generator, i: int) -> float:
        return float(r.uniform(0.05, 0.12) if i % 2 == 0 else r.uniform(0.5, 0.6))

    return _Population(7, (1.5, 3.0), (0.2, 0.8), size, appearance, contrast, lateral=30.0)


def _crowded(rng: np.random.Generator, bins: int) -> _Population:
    def size(r: np.random.Generator, i: int) -> tuple[float, float]:
        return (float(r.uniform(34, 40)), float(r.uniform(85, 95)))

    def appearance(r: np.random.Generator, i: int) -> tuple[list[float], list[float]]:
        return _peaked_histogram(r, bins, [int(r.integers(bins))], mass=0.9), _random_cov(r)

    def contrast(r: np.random.Generator, i: int) -> float:
        return float(r.uniform(0.4, 0.6))

    return _Population(10, (1.5, 3.0), (0.45, 0.55), size, appearance, contrast, lateral=10.0)


@dataclass(frozen=True)
class RegimePreset:
    name: str
    population: Callable[[np.random.Generator, int], _Population]
    appearance_noise: float
    size_noise: float
    miss_rate: float
    bbox_jitter: float
    description: str = ""
    width_noise: float = 0.0


PRESETS: dict[str, RegimePreset] = {
    p.name: p
    for p in (
        RegimePreset(
            "appearance-stable/size-noisy",
            _appearance_stable,
            appearance_noise=0.05,
            size_noise=0.1,
            miss_rate=0.02,
            bbox_jitter=1.0,
            width_noise=0.35,
            description="similar-sized high-contrast objects with distinct colours; box sizes unreliable",
        ),
        RegimePreset(
            "size-stable/appearance-noisy",
            _size_stable,
            appearance_noise=0.2,
            size_noise=0.02,
            miss_rate=0.02,
            bbox_jitter=1.0,
            description="low-contrast objects of distinct sizes and look-alike colours; colours unreliable",
        ),
        RegimePreset(
            "crowded-crossing",
            _crowded,
            appearance_noise=0.1,
            size_noise=0.05,
            miss_rate=0.05,
            bbox_jitter=1.5,
            description="dense opposite-direction traffic in a narrow band; frequent heavy occlusion",
        ),
    )
}


def regime_library() -> dict[str, RegimePreset]:
    return dict(PRESETS)


@dataclass
class _Segment:
    preset: str
    length: int


def scenario(
    regimes: list[tuple[str, int]] | str,
    seed: int = 0,
    *,
    width: float = 480.0,
    height: float = 360.0,
    fps: float = 25.0,
    name: str | None = None,
    hist_bins: int = DEFAULT_HIST_BINS,
    length: int = 300,
) -> ScenarioSpec:
    """Build a scenario from preset names, e.g. ``[("crowded-crossing", 300)]``.

    A bare preset name gives one regime of ``length`` frames. Each regime
    brings its own object population.
    """
    if isinstance(regimes, str):
        regimes = [(regimes, length)]
    segments = [_Segment(p, n) for p, n in regimes]
    for s in segments:
        if s.preset not in PRESETS:
            raise KeyError(f"unknown preset {s.preset!r}; known: {sorted(PRESETS)}")
    rng = np.random.default_rng([seed, 7919])
    objects: list[ObjectSpec] = []
    regime_specs: list[RegimeSpec] = []
    t = 0
    for s in segments:
        preset = PRESETS[s.preset]
        pop = preset.population(rng, hist_bins)
        objects.extend(_walkers(rng, pop, t, t + s.length, width, height))
        regime_specs.append(
            RegimeSpec(t, t + s.length, preset.appearance_noise, preset.size_noise, preset.miss_rate, preset.bbox_jitter, s.preset, preset.width_noise)
        )
        t += s.length
    label = name or "+".join(s.preset for s in segments) + f"-s{seed}"
    return ScenarioSpec(width, height, t, objects, regime_specs, fps, seed, label, hist_bins)
