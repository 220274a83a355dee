"""Online parameter control: evaluate, and on alarm retune from the learned database."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from sklearn.base import BaseEstimator

from .context import DEFAULT_RADIUS, ContextSignature, context_distance, frame_features_batch
from .descriptors import DEFAULT_SERIES_WINDOW, DEFAULT_SIGMA_COV
from .evaluation import DEFAULT_NEIGHBOR_ALPHA, EvalConfig, OnlineEvaluator, QualityScores
from .learning import ClusterEntry, ContextLearner, LearnedDatabase
from .model import N_DESCRIPTORS, Detection, SceneSequence, Track, TrackerParams
from .tracker import DEFAULT_GATE, DEFAULT_MOTION_GATE, TrackerState
from .validation import check_fraction, check_positive_int, check_sequence, check_weights

NO_MATCH = -1


@dataclass(frozen=True)
class ControllerConfig:
    """Thresholds of the control loop.

    ``cooldown`` is the number of frames after a parameter change during
    which further alarms do not trigger matching; ``None`` means ``n``.
    """

    th1: float = 0.2
    th2: float = 0.15
    th3: float = 0.5
    n: int = 50
    cooldown: int | None = None
    alpha: float = DEFAULT_NEIGHBOR_ALPHA
    radius: float = DEFAULT_RADIUS
    series_window: int = DEFAULT_SERIES_WINDOW

    def __post_init__(self) -> None:
        check_fraction(self.th3, "th3", open_low=True)
        check_positive_int(self.n, "n")
        if self.cooldown is not None and self.cooldown < 0:
            raise ValueError("cooldown must be non-negative")

    @property
    def eval_config(self) -> EvalConfig:
        return EvalConfig(self.th1, self.th2, self.alpha)

    @property
    def cooldown_frames(self) -> int:
        return self.n if self.cooldown is None else self.cooldown


def match_cluster(
    window: ContextSignature, db: LearnedDatabase, th3: float = 0.5
) -> tuple[ClusterEntry | None, dict[int, float]]:
    """Closest cluster if its distance is below ``th3``; ties go to the lowest id.

    Also returns the distance to every cluster.
    """
    distances = {c.id: context_distance(window, c.signature) for c in db.clusters}
    if not distances:
        return None, distances
    best_id = min(distances, key=lambda cid: (distances[cid], cid))
    if distances[best_id] < th3:
        return db.get(best_id), distances
    return None, distances


@dataclass(frozen=True, slots=True)
class ControlRecord:
    frame: int
    alarm: bool
    cluster_id: int | None
    w: tuple[float, ...]


@dataclass
class ControlLog:
    """Append-only per-frame record of the control loop.

    ``cluster_id`` is ``None`` when no matching ran, ``NO_MATCH`` when the
    window matched no cluster. ``w`` holds the weights in force after the
    frame was processed.
    """

    records: list[ControlRecord] = field(default_factory=list)
    unmatched_windows: list[tuple[int, int]] = field(default_factory=list)
    tuning_frames: list[int] = field(default_factory=list)

    def append(self, record: ControlRecord) -> None:
        if self.records and record.frame <= self.records[-1].frame:
            raise ValueError("control log records must be appended in frame order")
        self.records.append(record)

    def summary(self) -> dict:
        return {
            "frames": len(self.records),
            "alarms": sum(r.alarm for r in self.records),
            "tuning_count": len(self.tuning_frames),
            "tuning_frames": list(self.tuning_frames),
            "unmatched_windows": [list(w) for w in self.unmatched_windows],
        }


class AdaptiveController:
    """Tracker plus online evaluation plus database-driven retuning.

    Call :meth:`step` once per frame, in order.
    """

    def __init__(
        self,
        database: LearnedDatabase,
        params: TrackerParams | None = None,
        config: ControllerConfig = ControllerConfig(),
        *,
        frame_width: float,
        frame_height: float,
        gate: float = DEFAULT_GATE,
        motion_gate: float | None = DEFAULT_MOTION_GATE,
        sigma_cov: float = DEFAULT_SIGMA_COV,
    ):
        self.database = database
        self.config = config
        self.frame_width = frame_width
        self.frame_height = frame_height
        self.tracker = TrackerState(params or TrackerParams(), gate, motion_gate, sigma_cov)
        self.evaluator = OnlineEvaluator(config.eval_config, config.series_window, sigma_cov)
        self.log = ControlLog()
        self._window: deque[list] = deque(maxlen=config.n)
        self._last_change: int | None = None
        self.scores: list[QualityScores] = []
        self.keep_scores = False

    @property
    def params(self) -> TrackerParams:
        return self.tracker.params

    def _window_signature(self) -> ContextSignature:
        missing = [entry for entry in self._window if entry[2] is None]
        if missing:
            rows = frame_features_batch([e[1] for e in missing], self.frame_width, self.frame_height, self.config.alpha)
            for entry, row in zip(missing, rows):
                entry[2] = row
        return ContextSignature.from_vectors([e[2] for e in self._window], self.config.radius)

    def step(self, frame: int, detections: Sequence[Detection]) -> list[tuple[int, Detection]]:
        assigned = self.tracker.step(frame, detections)
        if self.keep_scores:
            fired, scores = self.evaluator.evaluate(frame, assigned, self.tracker.link_sims)
            self.scores.extend(scores)
        else:
            fired = self.evaluator.check(frame, assigned, self.tracker.link_sims)
        entry: list = [frame, detections, None]
        self._window.append(entry)

        cluster_id = None
        cooling = self._last_change is not None and frame - self._last_change < self.config.cooldown_frames
        if fired and not cooling and self.database.clusters:
            cluster, _ = match_cluster(self._window_signature(), self.database, self.config.th3)
            if cluster is None:
                cluster_id = NO_MATCH
                self.log.unmatched_windows.append((self._window[0][0], frame))
            else:
                cluster_id = cluster.id
                if cluster.params.w != self.tracker.params.w:
                    self.tracker.set_params(cluster.params)
                    self._last_change = frame
                    self.log.tuning_frames.append(frame)
        elif fired and not self.database.clusters:
            cluster_id = NO_MATCH
            self.log.unmatched_windows.append((self._window[0][0], frame))
        self.log.append(ControlRecord(frame, fired, cluster_id, self.tracker.params.w))
        return assigned

    def tracks(self) -> list[Track]:
        return self.tracker.tracks()


def run_controller(
    sequence: SceneSequence,
    database: LearnedDatabase,
    params: TrackerParams | None = None,
    config: ControllerConfig = ControllerConfig(),
    *,
    gate: float = DEFAULT_GATE,
    motion_gate: float | None = DEFAULT_MOTION_GATE,
    sigma_cov: float = DEFAULT_SIGMA_COV,
    keep_scores: bool = False,
) -> tuple[list[Track], AdaptiveController]:
    ctl = AdaptiveController(
        database,
        params,
        config,
        frame_width=sequence.frame_width,
        frame_height=sequence.frame_height,
        gate=gate,
        motion_gate=motion_gate,
        sigma_cov=sigma_cov,
    )
    ctl.keep_scores = keep_scores
    for t, dets in enumerate(sequence.detections_by_frame):
        ctl.step(t, dets)
    return ctl.tracks(), ctl


class AdaptiveTracker(BaseEstimator):
    """Self-tuning tracker with the scikit-learn estimator interface.

    ``fit`` learns a database from annotated sequences (skipped when
    ``database`` is given); ``predict`` tracks a sequence under online
    control and keeps the control log in ``log_``.
    """

    def __init__(
        self,
        database: LearnedDatabase | None = None,
        weights=(0.2, 0.2, 0.2, 0.2, 0.2),
        temporal_window: int = 10,
        th1: float = 0.2,
        th2: float = 0.15,
        th3: float = 0.5,
        n: int = 50,
        cooldown: int | None = None,
        gate: float = DEFAULT_GATE,
        motion_gate: float | None = DEFAULT_MOTION_GATE,
        learner: ContextLearner | None = None,
    ):
        self.database = database
        self.weights = weights
        self.temporal_window = temporal_window
        self.th1 = th1
        self.th2 = th2
        self.th3 = th3
        self.n = n
        self.cooldown = cooldown
        self.gate = gate
        self.motion_gate = motion_gate
        self.learner = learner

    def fit(self, X: Sequence[SceneSequence] | None = None, y=None):
        if self.database is not None:
            self.database_ = self.database
        elif X is not None:
            learner = self.learner if self.learner is not None else ContextLearner(temporal_window=self.temporal_window)
            self.database_ = learner.fit(X).database_
        else:
            self.database_ = LearnedDatabase()
        return self

    def predict(self, X: SceneSequence) -> list[Track]:
        if not hasattr(self, "database_"):
            self.fit()
        params = TrackerParams(check_weights(self.weights, N_DESCRIPTORS), self.temporal_window)
        config = ControllerConfig(self.th1, self.th2, self.th3, self.n, self.cooldown)
        tracks, ctl = run_controller(
            check_sequence(X), self.database_, params, config, gate=self.gate, motion_gate=self.motion_gate
        )
        self.log_ = ctl.log
        return tracks
