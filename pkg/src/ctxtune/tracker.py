"""Appearance-based multi-object tracker driven by five descriptor weights.

Each frame, detections are matched to live tracks (active ones and tracks lost
for at most ``temporal_window`` frames) by maximising the summed link score
``sum_k w_k * s_k`` with the Hungarian algorithm. Pairs scoring below ``gate``
or lying too far apart are never linked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from .descriptors import DEFAULT_SIGMA_COV, DetectionBatch, link_similarity, similarity_matrix
from .model import N_DESCRIPTORS, Detection, SceneSequence, Track, TrackerParams
from .validation import check_sequence, check_weights

DEFAULT_GATE = 0.3
DEFAULT_MOTION_GATE = 1.0
_INFEASIBLE = 1e6


def link_score(a: Detection, b: Detection, params: TrackerParams, sigma_cov: float = DEFAULT_SIGMA_COV) -> float:
    return sum(w * link_similarity(k, a, b, sigma_cov) for k, w in enumerate(params.w, start=1) if w)


def _canonical_key(d: Detection) -> tuple:
    b = d.bbox
    return (b.x, b.y, b.w, b.h, d.confidence, d.appearance.histogram, d.appearance.contrast)


@dataclass
class _TrackRecord:
    id: int
    observations: list[Detection]

    @property
    def last(self) -> Detection:
        return self.observations[-1]


@dataclass
class TrackerState:
    """Mutable state of one tracking run.

    ``motion_gate`` bounds the centre distance of a link to that many mean box
    diagonals; ``None`` disables the spatial gate.
    """

    params: TrackerParams = field(default_factory=TrackerParams)
    gate: float = DEFAULT_GATE
    motion_gate: float | None = DEFAULT_MOTION_GATE
    sigma_cov: float = DEFAULT_SIGMA_COV
    frame: int = -1
    next_id: int = 1
    live: dict[int, _TrackRecord] = field(default_factory=dict)
    finished: list[_TrackRecord] = field(default_factory=list)
    # histogram and covariance similarity of each detection of the latest step
    # to its track's previous observation; NaN for new tracks
    link_sims: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    def set_params(self, params: TrackerParams) -> TrackerState:
        """Swap the descriptor weights; takes effect from the next step."""
        self.params = params
        return self

    def step(self, frame: int, detections: Sequence[Detection]) -> list[tuple[int, Detection]]:
        """Associate the detections of ``frame``; returns ``(track id, detection)`` pairs."""
        if frame <= self.frame:
            raise ValueError(f"frame {frame} received after frame {self.frame}")
        self.frame = frame
        window = self.params.temporal_window
        for tid in [tid for tid, rec in self.live.items() if frame - rec.last.frame > window]:
            self.finished.append(self.live.pop(tid))

        dets = sorted(detections, key=_canonical_key)
        cand_ids = sorted(self.live)
        matched: dict[int, int] = {}
        self.link_sims = np.full((len(dets), 2), np.nan)
        if dets and cand_ids:
            matched = self._match(dets, [self.live[tid].last for tid in cand_ids], cand_ids)

        out: list[tuple[int, Detection]] = []
        for i, det in enumerate(dets):
            tid = matched.get(i)
            if tid is None:
                tid = self.next_id
                self.next_id += 1
                self.live[tid] = _TrackRecord(tid, [])
            self.live[tid].observations.append(det)
            out.append((tid, det))
        return out

    def _match(self, dets: list[Detection], cands: list[Detection], cand_ids: list[int]) -> dict[int, int]:
        a, b = DetectionBatch(dets), DetectionBatch(cands)
        sims = similarity_matrix(a, b, self.sigma_cov)
        w = np.asarray(self.params.w)
        score = np.tensordot(w, sims, axes=1)
        feasible = score >= self.gate
        if self.motion_gate is not None:
            dist = np.hypot(a.cx[:, None] - b.cx[None, :], a.cy[:, None] - b.cy[None, :])
            reach = self.motion_gate * 0.5 * (a.diag[:, None] + b.diag[None, :])
            feasible &= dist <= reach
        if not feasible.any():
            return {}
        cost = np.where(feasible, -score, _INFEASIBLE)
        rows, cols = linear_sum_assignment(cost)
        keep = feasible[rows, cols]
        rows, cols = rows[keep], cols[keep]
        self.link_sims[rows] = sims[2:4, rows, cols].T
        return {int(r): cand_ids[c] for r, c in zip(rows, cols)}

    def tracks(self) -> list[Track]:
        """All tracks created so far, ordered by id."""
        recs = sorted([*self.finished, *self.live.values()], key=lambda r: r.id)
        return [Track(r.id, tuple(r.observations)) for r in recs if r.observations]


def run_tracker(
    sequence: SceneSequence,
    params: TrackerParams | None = None,
    *,
    gate: float = DEFAULT_GATE,
    motion_gate: float | None = DEFAULT_MOTION_GATE,
    sigma_cov: float = DEFAULT_SIGMA_COV,
) -> list[Track]:
    """Track a whole sequence with fixed parameters."""
    state = TrackerState(params or TrackerParams(), gate, motion_gate, sigma_cov)
    for t, dets in enumerate(sequence.detections_by_frame):
        state.step(t, dets)
    return state.tracks()


class AppearanceTracker(BaseEstimator):
    """Fixed-parameter tracker with the scikit-learn estimator interface.

    Parameters
    ----------
    weights : sequence of 5 floats
        Shape-ratio, area, histogram, covariance and dominant-colour weights.
        Renormalised to sum to one.
    temporal_window : int
        Frames a lost track stays eligible for revival.
    gate : float
        Minimum link score for a detection to join a track.
    motion_gate : float or None
        Maximum link distance in mean box diagonals.
    sigma_cov : float
        Scale of the covariance similarity.
    """

    def __init__(
        self,
        weights=(0.2, 0.2, 0.2, 0.2, 0.2),
        temporal_window: int = 10,
        gate: float = DEFAULT_GATE,
        motion_gate: float | None = DEFAULT_MOTION_GATE,
        sigma_cov: float = DEFAULT_SIGMA_COV,
    ):
        self.weights = weights
        self.temporal_window = temporal_window
        self.gate = gate
        self.motion_gate = motion_gate
        self.sigma_cov = sigma_cov

    def fit(self, X=None, y=None):
        self.params_ = TrackerParams(check_weights(self.weights, N_DESCRIPTORS), self.temporal_window)
        return self

    def predict(self, X: SceneSequence) -> list[Track]:
        if not hasattr(self, "params_"):
            self.fit()
        return run_tracker(
            check_sequence(X), self.params_, gate=self.gate, motion_gate=self.motion_gate, sigma_cov=self.sigma_cov
        )

    def fit_predict(self, X: SceneSequence, y=None) -> list[Track]:
        return self.fit(X).predict(X)
