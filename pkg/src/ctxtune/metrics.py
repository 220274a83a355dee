"""Track-level coverage (MT/PT/ML) and CLEAR MOT scores against ground truth."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Track

DEFAULT_IOU = 0.5
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


def _boxes_by_frame(tracks: Sequence[Track]) -> dict[int, tuple[list[int], np.ndarray]]:
    rows: dict[int, list[tuple[int, float, float, float, float]]] = {}
    for tr in tracks:
        for d in tr.observations:
            b = d.bbox
            rows.setdefault(d.frame, []).append((tr.id, b.x, b.y, b.x + b.w, b.y + b.h))
    return {t: ([r[0] for r in rs], np.array([r[1:] for r in rs], dtype=float)) for t, rs in rows.items()}


def _iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _check_gt(gt: Sequence[Track]) -> None:
    if not gt:
        raise ValueError("ground truth is empty")


def coverage_metrics(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> tuple[float, float, float]:
    """Percentages of ground-truth tracks mostly tracked, partially tracked and mostly lost.

    A ground-truth track's coverage is the share of its frames matched (one
    to one, IoU >= ``iou_thresh``) by its single best output identity.
    Coverage > 0.8 is MT, < 0.2 is ML, anything else PT.
    """
    _check_gt(gt)
    counts = coverage_counts(gt, out, iou_thresh)
    n = len(gt)
    return tuple(100.0 * c / n for c in counts)  # type: ignore[return-value]


def track_coverage(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> dict[int, float]:
    _check_gt(gt)
    gt_frames, out_frames = _boxes_by_frame(gt), _boxes_by_frame(out)
    hits: dict[int, Counter] = {tr.id: Counter() for tr in gt}
    for t, (gids, gboxes) in gt_frames.items():
        if t not in out_frames:
            continue
        oids, oboxes = out_frames[t]
        overlap = _iou_matrix(gboxes, oboxes)
        rows, cols = linear_sum_assignment(-overlap)
        for r, c in zip(rows, cols):
            if overlap[r, c] >= iou_thresh:
                hits[gids[r]][oids[c]] += 1
    return {tr.id: (max(hits[tr.id].values()) if hits[tr.id] else 0) / len(tr) for tr in gt}


def coverage_counts(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> tuple[int, int, int]:
    cov = track_coverage(gt, out, iou_thresh)
    mt = sum(1 for c in cov.values() if c > MOSTLY_TRACKED)
    ml = sum(1 for c in cov.values() if c < MOSTLY_LOST)
    return mt, len(cov) - mt - ml, ml


def percentages(mt: int, pt: int, ml: int) -> tuple[float, float, float]:
    n = mt + pt + ml
    if n == 0:
        raise ValueError("no ground-truth tracks")
    return 100.0 * mt / n, 100.0 * pt / n, 100.0 * ml / n


@dataclass(frozen=True)
class ClearMotCounts:
    gt: int
    matches: int
    misses: int
    false_positives: int
    id_switches: int
    iou_sum: float

    @property
    def mota(self) -> float:
        return 1.0 - (self.misses + self.false_positives + self.id_switches) / self.gt

    @property
    def motp(self) -> float:
        return self.iou_sum / self.matches if self.matches else 0.0


def clear_mot_counts(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> ClearMotCounts:
    _check_gt(gt)
    gt_frames, out_frames = _boxes_by_frame(gt), _boxes_by_frame(out)
    current: dict[int, int] = {}  # gt id -> output id matched in the previous frame
    last_seen: dict[int, int] = {}  # gt id -> output id of its latest match
    n_gt = matches = fp = idsw = 0
    iou_sum = 0.0
    for t in sorted(set(gt_frames) | set(out_frames)):
        gids, gboxes = gt_frames.get(t, ([], np.empty((0, 4))))
        oids, oboxes = out_frames.get(t, ([], np.empty((0, 4))))
        n_gt += len(gids)
        if not gids or not oids:
            fp += len(oids)
            current = {}
            continue
        overlap = _iou_matrix(gboxes, oboxes)
        g_index = {g: i for i, g in enumerate(gids)}
        o_index = {o: j for j, o in enumerate(oids)}
        pairs: dict[int, int] = {}
        for g, o in current.items():
            if g in g_index and o in o_index and overlap[g_index[g], o_index[o]] >= iou_thresh:
                pairs[g_index[g]] = o_index[o]
        free_g = [i for i in range(len(gids)) if i not in pairs]
        used_o = set(pairs.values())
        free_o = [j for j in range(len(oids)) if j not in used_o]
        if free_g and free_o:
            sub = overlap[np.ix_(free_g, free_o)]
            rows, cols = linear_sum_assignment(-sub)
            for r, c in zip(rows, cols):
                if sub[r, c] >= iou_thresh:
                    pairs[free_g[r]] = free_o[c]
        nxt = {}
        for i, j in pairs.items():
            g, o = gids[i], oids[j]
            if g in last_seen and last_seen[g] != o:
                idsw += 1
            last_seen[g] = o
            nxt[g] = o
            iou_sum += overlap[i, j]
        current = nxt
        matches += len(pairs)
        fp += len(oids) - len(pairs)
    return ClearMotCounts(n_gt, matches, n_gt - matches, fp, idsw, iou_sum)


def clear_mot(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> tuple[float, float]:
    """Raw MOTA (may be negative) and MOTP as mean matched IoU (0 without matches)."""
    c = clear_mot_counts(gt, out, iou_thresh)
    return c.mota, c.motp


@dataclass(frozen=True)
class MetricsReport:
    gt: int
    mt: float
    pt: float
    ml: float
    mota: float
    motp: float
    m_bar: float
    iou_thresh: float
    mota_raw: float
    id_switches: int

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        head = f"{'GT':>4} {'MT%':>6} {'PT%':>6} {'ML%':>6} {'MOTA':>6} {'MOTP':>6} {'M':>6} {'IDSW':>5}"
        row = (
            f"{self.gt:>4d} {self.mt:>6.1f} {self.pt:>6.1f} {self.ml:>6.1f} "
            f"{self.mota:>6.2f} {self.motp:>6.2f} {self.m_bar:>6.2f} {self.id_switches:>5d}"
        )
        return f"{head}\n{row}"

    def csv_rows(self) -> list[str]:
        keys = list(self.to_dict())
        vals = [f"{v:.6g}" if isinstance(v, float) else str(v) for v in self.to_dict().values()]
        return [",".join(keys), ",".join(vals)]


def evaluate_tracks(gt: Sequence[Track], out: Sequence[Track], iou_thresh: float = DEFAULT_IOU) -> MetricsReport:
    mt, pt, ml = coverage_metrics(gt, out, iou_thresh)
    counts = clear_mot_counts(gt, out, iou_thresh)
    mota = max(0.0, counts.mota)
    return MetricsReport(len(gt), mt, pt, ml, mota, counts.motp, (mota + counts.motp) / 2.0, iou_thresh, counts.mota, counts.id_switches)
