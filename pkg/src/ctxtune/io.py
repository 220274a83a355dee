"""Readers and writers for sequences, tracks, learned databases and control logs.

Formats
-------
Geometry CSV
    ``frame,id,x,y,w,h,conf`` with a header row; ``id`` is -1 for raw
    detections and >= 1 for ground truth.
Appearance sidecar (JSON Lines)
    One object per box: ``frame``, ``det_index`` (row order of that box
    within its frame in the CSV), ``hist``, ``cov`` (6 upper-triangle
    entries), ``dom`` (``[[bin, weight], ...]``) and ``contrast``.
Sequence manifest (JSON)
    ``width``, ``height``, ``fps``, optional ``length`` and ``name``, and
    paths (relative to the manifest) ``detections``, ``appearance``,
    ``ground_truth``, ``ground_truth_appearance``.
Track CSV
    ``frame,id,x,y,w,h``.
Learned database (JSON)
    ``{"version": 1, "config": {...}, "clusters": [{"id", "signature":
    {"books": [[{"c", "r", "n"}, ...] x 6], "frames"}, "w": [5],
    "provenance": [{"video", "start", "end", "length"}]}]}``.
Control log CSV
    ``frame,alarm,cluster_id,w1..w5``; ``cluster_id`` is empty when no
    matching ran and -1 when the window matched no cluster.

Floats are written with 9 significant digits.
"""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path
from typing import Any, Iterable, Sequence

from .context import ContextSignature
from .controller import ControlLog, ControlRecord
from .evaluation import QualityScores
from .geometry import BBox
from .learning import DB_VERSION, ClusterEntry, LearnedDatabase
from .model import Appearance, Detection, SceneSequence, Track, TrackerParams

GEOMETRY_HEADER = ["frame", "id", "x", "y", "w", "h", "conf"]
TRACK_HEADER = ["frame", "id", "x", "y", "w", "h"]
CONTROL_HEADER = ["frame", "alarm", "cluster_id", "w1", "w2", "w3", "w4", "w5"]
SCORES_HEADER = ["frame", "id", "d", "occ_prev", "occ_now", "I", "E"]
SIG_DIGITS = 9


class FormatError(ValueError):
    """A file does not follow its documented format."""


class IngestWarning(UserWarning):
    """Input was accepted but completed with neutral defaults."""


def quantize(x: float) -> float:
    """Round to the precision the writers use, so values survive a round trip."""
    return float(format(x, f".{SIG_DIGITS}g"))


def fmt(x: float) -> str:
    if isinstance(x, int):
        return str(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, f".{SIG_DIGITS}g")


def _quantize_tree(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return quantize(obj)
    if isinstance(obj, dict):
        return {str(k): _quantize_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_quantize_tree(v) for v in obj]
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_json(obj: Any) -> str:
    return json.dumps(_quantize_tree(obj), indent=1) + "\n"


def _write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# -- geometry CSV -----------------------------------------------------------------


def _parse_rows(path: Path, n_cols: int) -> list[tuple[int, list[str]]]:
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip() == "frame":
                continue
            if len(row) != n_cols:
                raise FormatError(f"{path}:{lineno}: expected {n_cols} fields, got {len(row)}")
            out.append((lineno, [c.strip() for c in row]))
    return out


def _box_row(path: Path, lineno: int, row: list[str]) -> tuple[int, int, BBox, float | None]:
    try:
        frame, tid = int(row[0]), int(row[1])
        x, y, w, h = (float(v) for v in row[2:6])
        conf = float(row[6]) if len(row) > 6 else None
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    if frame < 0:
        raise FormatError(f"{path}:{lineno}: negative frame index {frame}")
    if not (w > 0 and h > 0):
        raise FormatError(f"{path}:{lineno}: box size must be positive (w={row[4]}, h={row[5]})")
    if conf is not None and not 0.0 <= conf <= 1.0:
        raise FormatError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")
    try:
        box = BBox(x, y, w, h)
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from None
    return frame, tid, box, conf


def _appearance_record(frame: int, index: int, app: Appearance) -> dict:
    return {
        "frame": frame,
        "det_index": index,
        "hist": list(app.histogram),
        "cov": list(app.covariance),
        "dom": [[i, w] for i, w in app.dominant_colors],
        "contrast": app.contrast,
    }


def _read_appearance(path: Path | None, what: str) -> dict[tuple[int, int], Appearance] | None:
    if path is None or not path.exists():
        warnings.warn(f"no appearance sidecar for {what}; using neutral appearance", IngestWarning, stacklevel=3)
        return None
    out: dict[tuple[int, int], Appearance] = {}
    no_contrast = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                app = Appearance(
                    tuple(float(v) for v in rec["hist"]),
                    tuple(float(v) for v in rec["cov"]),
                    tuple((int(i), float(w)) for i, w in rec["dom"]),
                    float(rec.get("contrast", 0.5)),
                )
                no_contrast += "contrast" not in rec
                key = (int(rec["frame"]), int(rec["det_index"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if key in out:
                raise FormatError(f"{path}:{lineno}: duplicate record for frame {key[0]} index {key[1]}")
            out[key] = app
    if no_contrast:
        warnings.warn(f"{path}: {no_contrast} records lack contrast; using 0.5", IngestWarning, stacklevel=3)
    return out


def _attach(
    rows: list[tuple[int, int, BBox, float | None]], appearance: dict | None, path: Path
) -> list[tuple[int, Detection]]:
    per_frame: dict[int, int] = {}
    out = []
    missing = 0
    for frame, tid, box, conf in rows:
        idx = per_frame.get(frame, 0)
        per_frame[frame] = idx + 1
        app = None
        if appearance is not None:
            app = appearance.pop((frame, idx), None)
            if app is None:
                missing += 1
        out.append((tid, Detection(frame, box, 1.0 if conf is None else conf, app or Appearance.neutral())))
    if appearance:
        frame, idx = next(iter(appearance))
        raise FormatError(f"{path}: appearance record for frame {frame} index {idx} has no matching box")
    if missing:
        warnings.warn(f"{path}: {missing} boxes lack appearance records; using neutral appearance", IngestWarning, stacklevel=3)
    return out


def _geometry_lines(items: Iterable[tuple[int, Detection]]) -> list[str]:
    lines = [",".join(GEOMETRY_HEADER)]
    for tid, d in items:
        b = d.bbox
        lines.append(",".join([str(d.frame), str(tid), fmt(b.x), fmt(b.y), fmt(b.w), fmt(b.h), fmt(d.confidence)]))
    return lines


def _sidecar_lines(items: Iterable[tuple[int, Detection]]) -> list[str]:
    per_frame: dict[int, int] = {}
    lines = []
    for _, d in items:
        idx = per_frame.get(d.frame, 0)
        per_frame[d.frame] = idx + 1
        lines.append(json.dumps(_quantize_tree(_appearance_record(d.frame, idx, d.appearance))))
    return lines


def _gt_items(tracks: Sequence[Track]) -> list[tuple[int, Detection]]:
    items = [(tr.id, d) for tr in tracks for d in tr.observations]
    items.sort(key=lambda it: (it[1].frame, it[0]))
    return items


def write_sequence(seq: SceneSequence, directory: str | Path, stem: str = "sequence") -> Path:
    """Write ``seq`` as manifest + CSV + JSONL files; returns the manifest path."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    det_items = [(-1, d) for dets in seq.detections_by_frame for d in dets]
    _write_text(out / f"{stem}.det.csv", "\n".join(_geometry_lines(det_items)) + "\n")
    _write_text(out / f"{stem}.det.jsonl", "".join(line + "\n" for line in _sidecar_lines(det_items)))
    manifest: dict[str, Any] = {
        "name": seq.name or stem,
        "width": seq.frame_width,
        "height": seq.frame_height,
        "fps": seq.fps,
        "length": len(seq),
        "detections": f"{stem}.det.csv",
        "appearance": f"{stem}.det.jsonl",
    }
    if seq.ground_truth is not None:
        gt_items = _gt_items(seq.ground_truth)
        _write_text(out / f"{stem}.gt.csv", "\n".join(_geometry_lines(gt_items)) + "\n")
        _write_text(out / f"{stem}.gt.jsonl", "".join(line + "\n" for line in _sidecar_lines(gt_items)))
        manifest["ground_truth"] = f"{stem}.gt.csv"
        manifest["ground_truth_appearance"] = f"{stem}.gt.jsonl"
    path = out / f"{stem}.json"
    _write_text(path, dumps_json(manifest))
    return path


def read_sequence(manifest_path: str | Path) -> SceneSequence:
    """Load and validate a sequence from its manifest.

    Missing appearance data falls back to neutral appearance with an
    :class:`IngestWarning`.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        width, height, fps = float(manifest["width"]), float(manifest["height"]), float(manifest.get("fps", 25.0))
        det_path = base / manifest["detections"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: invalid manifest ({exc})") from None

    def resolve(key: str) -> Path | None:
        return base / manifest[key] if manifest.get(key) else None

    det_rows = [_box_row(det_path, ln, row) for ln, row in _parse_rows(det_path, len(GEOMETRY_HEADER))]
    dets = _attach(det_rows, _read_appearance(resolve("appearance"), str(det_path)), det_path)
    gt = None
    gt_path = resolve("ground_truth")
    if gt_path is not None:
        gt_rows = [_box_row(gt_path, ln, row) for ln, row in _parse_rows(gt_path, len(GEOMETRY_HEADER))]
        for frame, tid, _, _ in gt_rows:
            if tid < 1:
                raise FormatError(f"{gt_path}: ground-truth id {tid} at frame {frame} must be >= 1")
        gt_dets = _attach(gt_rows, _read_appearance(resolve("ground_truth_appearance"), str(gt_path)), gt_path)
        by_id: dict[int, list[Detection]] = {}
        for tid, d in gt_dets:
            by_id.setdefault(tid, []).append(d)
        try:
            gt = [Track.from_detections(tid, obs) for tid, obs in sorted(by_id.items())]
        except ValueError as exc:
            raise FormatError(f"{gt_path}: {exc}") from None
    try:
        return SceneSequence.from_detections(
            (d for _, d in dets),
            frame_width=width,
            frame_height=height,
            fps=fps,
            length=manifest.get("length"),
            ground_truth=gt,
            name=str(manifest.get("name", manifest_path.stem)),
        )
    except ValueError as exc:
        raise FormatError(f"{manifest_path}: {exc}") from None


# -- tracks -----------------------------------------------------------------------


def track_lines(tracks: Sequence[Track]) -> list[str]:
    lines = [",".join(TRACK_HEADER)]
    for tid, d in _gt_items(tracks):
        b = d.bbox
        lines.append(",".join([str(d.frame), str(tid), fmt(b.x), fmt(b.y), fmt(b.w), fmt(b.h)]))
    return lines


def write_tracks(path: str | Path, tracks: Sequence[Track]) -> None:
    _write_text(path, "\n".join(track_lines(tracks)) + "\n")


def read_tracks(path: str | Path) -> list[Track]:
    """Read a track CSV (6 columns, or 7 with a trailing confidence)."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    n_cols = len(first.split(",")) if first.strip() else len(TRACK_HEADER)
    if n_cols not in (6, 7):
        raise FormatError(f"{path}:1: expected 6 or 7 fields, got {n_cols}")
    by_id: dict[int, list[Detection]] = {}
    for ln, row in _parse_rows(path, n_cols):
        frame, tid, box, conf = _box_row(path, ln, row)
        if tid < 1:
            raise FormatError(f"{path}:{ln}: track id {tid} must be >= 1")
        by_id.setdefault(tid, []).append(Detection(frame, box, 1.0 if conf is None else conf))
    try:
        return [Track.from_detections(tid, obs) for tid, obs in sorted(by_id.items())]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


# -- learned database -------------------------------------------------------------


def db_to_dict(db: LearnedDatabase) -> dict:
    return {
        "version": db.version,
        "config": dict(db.config),
        "clusters": [
            {
                "id": c.id,
                "signature": c.signature.to_dict(),
                "w": list(c.params.w),
                "provenance": [{"video": v, "start": s, "end": e, "length": n} for v, s, e, n in c.provenance],
            }
            for c in db.clusters
        ],
    }


def db_from_dict(data: dict) -> LearnedDatabase:
    version = data.get("version")
    if version != DB_VERSION:
        raise FormatError(f"unsupported learned-database version {version!r} (expected {DB_VERSION})")
    config = dict(data.get("config", {}))
    window = int(config.get("temporal_window", 10))
    try:
        clusters = tuple(
            ClusterEntry(
                int(c["id"]),
                ContextSignature.from_dict(c["signature"]),
                TrackerParams(tuple(float(v) for v in c["w"]), window),
                tuple((str(p["video"]), int(p["start"]), int(p["end"]), int(p["length"])) for p in c.get("provenance", [])),
            )
            for c in data.get("clusters", [])
        )
        return LearnedDatabase(clusters, config, version)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid learned database: {exc}") from None


def dumps_db(db: LearnedDatabase) -> str:
    return dumps_json(db_to_dict(db))


def write_db(db: LearnedDatabase, path: str | Path) -> None:
    _write_text(path, dumps_db(db))


def read_db(path: str | Path) -> LearnedDatabase:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return db_from_dict(data)


# -- control log and diagnostics --------------------------------------------------


def control_lines(log: ControlLog) -> list[str]:
    lines = [",".join(CONTROL_HEADER)]
    for r in log.records:
        cid = "" if r.cluster_id is None else str(r.cluster_id)
        lines.append(",".join([str(r.frame), str(int(r.alarm)), cid, *(fmt(w) for w in r.w)]))
    return lines


def write_control_log(path: str | Path, log: ControlLog) -> None:
    _write_text(path, "\n".join(control_lines(log)) + "\n")


def read_control_log(path: str | Path) -> ControlLog:
    path = Path(path)
    log = ControlLog()
    for ln, row in _parse_rows(path, len(CONTROL_HEADER)):
        try:
            cid = int(row[2]) if row[2] else None
            log.append(ControlRecord(int(row[0]), row[1] == "1", cid, tuple(float(v) for v in row[3:])))
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: {exc}") from None
    return log


def write_scores(path: str | Path, scores: Sequence[QualityScores]) -> None:
    lines = [",".join(SCORES_HEADER)]
    for s in scores:
        vals = (s.density, s.occlusion_prev, s.occlusion_now, s.interaction, s.error)
        lines.append(",".join([str(s.frame), str(s.track_id), *(fmt(v) for v in vals)]))
    _write_text(path, "\n".join(lines) + "\n")


def write_json(path: str | Path, obj: Any) -> None:
    _write_text(path, dumps_json(obj))
