"""Command-line entry point: ``ctxtune <command> ...``.

Commands cover both phases: ``synth`` and ``learn`` build scenes and the
learned database offline, ``track`` and ``control`` run the fixed and the
self-tuning tracker, ``evaluate`` scores a track file and ``inspect-db``
summarises a database.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from . import __version__
from .controller import ControllerConfig, run_controller
from .io import (
    FormatError,
    dumps_json,
    read_db,
    read_sequence,
    read_tracks,
    write_control_log,
    write_db,
    write_json,
    write_scores,
    write_sequence,
    write_tracks,
)
from .learning import ContextLearner, LearnedDatabase
from .metrics import evaluate_tracks
from .model import N_DESCRIPTORS, TrackerParams
from .synth import PRESETS, ScenarioSpec, generate, scenario
from .tracker import DEFAULT_GATE, DEFAULT_MOTION_GATE, run_tracker

logger = logging.getLogger("ctxtune")

FORMATS = """\
file formats:
  sequence manifest (JSON)  width, height, fps, length, name and relative paths
                            "detections", "appearance", "ground_truth",
                            "ground_truth_appearance"; an optional "tracker"
                            object {"w": [5 weights], "temporal_window": T}
                            supplies defaults that flags override
  geometry CSV              frame,id,x,y,w,h,conf (id -1 for detections)
  appearance JSONL          {"frame", "det_index", "hist", "cov", "dom", "contrast"}
  track CSV                 frame,id,x,y,w,h
  learned database JSON     {"version": 1, "config", "clusters": [{"id",
                            "signature", "w", "provenance"}]}
  control log CSV           frame,alarm,cluster_id,w1..w5 (cluster_id empty when
                            no matching ran, -1 when nothing matched)
  scenario JSON             a full scenario (objects and regimes) or the short
                            form {"regimes": [["preset", frames], ...], "seed",
                            "width", "height"}

presets: """ + ", ".join(sorted(PRESETS))


def _weights(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be {N_DESCRIPTORS} comma-separated numbers") from None
    if len(values) != N_DESCRIPTORS or any(v < 0 for v in values) or sum(values) <= 0:
        raise argparse.ArgumentTypeError(f"weights must be {N_DESCRIPTORS} non-negative numbers with positive sum")
    return values


def _manifest_tracker(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    opts = data.get("tracker") or {}
    if not isinstance(opts, dict):
        raise FormatError(f"{path}: \"tracker\" must be an object")
    return opts


def _params(args: argparse.Namespace) -> TrackerParams:
    """Tracker parameters with precedence flags > manifest > built-in defaults."""
    opts = _manifest_tracker(args.manifest)
    w = args.w if args.w is not None else tuple(opts.get("w", TrackerParams().w))
    window = args.temporal_window if args.temporal_window is not None else int(opts.get("temporal_window", 10))
    return TrackerParams(w, window)


def _scenario_spec(path: str, seed: int | None) -> ScenarioSpec:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "objects" in data:
        spec = ScenarioSpec.from_dict(data)
        if seed is not None:
            spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": seed})
        return spec
    regimes = [(str(p), int(n)) for p, n in data["regimes"]]
    return scenario(
        regimes,
        seed if seed is not None else int(data.get("seed", 0)),
        width=float(data.get("width", 480.0)),
        height=float(data.get("height", 360.0)),
        fps=float(data.get("fps", 25.0)),
        name=data.get("name"),
    )


def cmd_synth(args: argparse.Namespace) -> int:
    spec = _scenario_spec(args.spec, args.seed)
    seq = generate(spec)
    manifest = write_sequence(seq, args.output, args.stem)
    print(manifest)
    return 0


def cmd_learn(args: argparse.Namespace) -> int:
    seqs = [read_sequence(m) for m in args.manifests]
    learner = ContextLearner(
        qt_diameter=args.qt_diameter,
        n_rounds=args.rounds,
        temporal_window=args.temporal_window,
        seed=args.seed,
    )
    db = learner.fit(seqs).database_
    for name in learner.skipped_videos_:
        logger.warning("skipped %s: no usable annotated chunk", name)
    write_db(db, args.output)
    print(f"{len(db.clusters)} clusters from {len(learner.chunks_)} chunks -> {args.output}")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    seq = read_sequence(args.manifest)
    tracks = run_tracker(seq, _params(args), gate=args.gate, motion_gate=args.motion_gate)
    write_tracks(args.output, tracks)
    return 0


def cmd_control(args: argparse.Namespace) -> int:
    seq = read_sequence(args.manifest)
    db = read_db(args.db)
    config = ControllerConfig(args.th1, args.th2, args.th3, args.n, args.cooldown)
    tracks, ctl = run_controller(
        seq, db, _params(args), config, gate=args.gate, motion_gate=args.motion_gate, keep_scores=args.scores is not None
    )
    write_tracks(args.output, tracks)
    write_control_log(args.log, ctl.log)
    summary = ctl.log.summary()
    summary_path = args.summary or str(Path(args.log).with_suffix(".summary.json"))
    write_json(summary_path, summary)
    if args.scores is not None:
        write_scores(args.scores, ctl.scores)
    print(f"alarms {summary['alarms']}, tuning events {summary['tuning_count']}, "
          f"unmatched windows {len(summary['unmatched_windows'])}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    seq = read_sequence(args.manifest)
    if not seq.ground_truth:
        raise FormatError(f"{args.manifest}: no ground truth to evaluate against")
    report = evaluate_tracks(seq.ground_truth, read_tracks(args.tracks), args.iou)
    if args.csv:
        print("\n".join(report.csv_rows()))
    elif args.json:
        print(dumps_json(report.to_dict()), end="")
    else:
        print(report.table())
    return 0


def _describe_db(db: LearnedDatabase) -> str:
    names = ("shape", "area", "hist", "cov", "dom")
    lines = [f"learned database, version {db.version}, {len(db.clusters)} clusters"]
    for c in db.clusters:
        w = "  ".join(f"{n}={v:.3f}" for n, v in zip(names, c.params.w))
        frames = sum(p[3] for p in c.provenance)
        videos = sorted({p[0] for p in c.provenance})
        lines.append(f"cluster {c.id}: {len(c.provenance)} chunks, {frames} frames, T={c.params.temporal_window}")
        lines.append(f"  w: {w}")
        lines.append(f"  videos: {', '.join(videos)}")
    return "\n".join(lines)


def cmd_inspect_db(args: argparse.Namespace) -> int:
    print(_describe_db(read_db(args.db)))
    return 0


def _add_tracker_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w", type=_weights, default=None, help="five descriptor weights w1..w5 (default: manifest, else 0.2 each)")
    p.add_argument("--temporal-window", type=int, default=None, help="frames a lost track stays revivable (default: manifest, else 10)")
    p.add_argument("--gate", type=float, default=DEFAULT_GATE, help=f"minimum link score (default {DEFAULT_GATE})")
    p.add_argument(
        "--motion-gate",
        type=float,
        default=DEFAULT_MOTION_GATE,
        help=f"maximum link distance in mean box diagonals (default {DEFAULT_MOTION_GATE})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxtune",
        description="Context-driven online tuning of a multi-object tracker.",
        epilog=FORMATS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("synth", help="generate a synthetic scene", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("spec", help="scenario JSON")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--stem", default="sequence", help="file name stem (default: sequence)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("learn", help="offline phase: learn a context database", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("manifests", nargs="+", help="annotated sequence manifests")
    p.add_argument("-o", "--output", required=True, help="database JSON to write")
    p.add_argument("--qt-diameter", type=float, default=0.3, help="QT cluster diameter (default 0.3)")
    p.add_argument("--rounds", type=int, default=50, help="boosting rounds (default 50)")
    p.add_argument("--temporal-window", type=int, default=10, help="pairing window in frames (default 10)")
    p.add_argument("--seed", type=int, default=0, help="negative-pair sampling seed (default 0)")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("track", help="run the tracker with fixed weights", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="track CSV to write")
    _add_tracker_flags(p)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("control", help="online phase: track under parameter control", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("manifest")
    p.add_argument("--db", required=True, help="learned database JSON")
    p.add_argument("-o", "--output", required=True, help="track CSV to write")
    p.add_argument("--log", required=True, help="control log CSV to write")
    p.add_argument("--summary", default=None, help="summary JSON (default: next to the log, .summary.json)")
    p.add_argument("--scores", default=None, help="also write per-object quality scores to this CSV")
    p.add_argument("--th1", type=float, default=0.2, help="score threshold (default 0.2)")
    p.add_argument("--th2", type=float, default=0.15, help="error-jump threshold (default 0.15)")
    p.add_argument("--th3", type=float, default=0.5, help="context-match threshold (default 0.5)")
    p.add_argument("--n", type=int, default=50, help="context window in frames (default 50)")
    p.add_argument("--cooldown", type=int, default=None, help="frames between tuning events (default: n)")
    _add_tracker_flags(p)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("evaluate", help="score tracks against ground truth", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("tracks", help="track CSV")
    p.add_argument("manifest", help="sequence manifest with ground truth")
    p.add_argument("--iou", type=float, default=0.5, help="match threshold (default 0.5)")
    out = p.add_mutually_exclusive_group()
    out.add_argument("--csv", action="store_true", help="print CSV instead of a table")
    out.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-db", help="summarise a learned database", epilog=FORMATS, formatter_class=fmt)
    p.add_argument("db")
    p.set_defaults(func=cmd_inspect_db)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        code = args.func(args)
    except (FormatError, ValueError, KeyError, OSError) as exc:
        print(f"ctxtune {args.command}: error: {exc}", file=sys.stderr)
        return 1
    logger.info("%s finished in %.2f s", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
