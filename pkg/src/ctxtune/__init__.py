"""Context-driven online tuning of a multi-object tracker's descriptor weights."""

from .context import ContextFeatureExtractor, ContextSignature, context_distance, frame_features, segment, window_signature
from .controller import AdaptiveController, AdaptiveTracker, ControllerConfig, match_cluster, run_controller
from .evaluation import EvalConfig, OnlineEvaluator
from .geometry import BBox, cover_rect, intersection_area, union_area
from .learning import AdaboostWeightLearner, ContextLearner, LearnedDatabase, QTClustering, build_database
from .metrics import MetricsReport, clear_mot, coverage_metrics, evaluate_tracks
from .model import Appearance, Detection, SceneSequence, Track, TrackerParams
from .tracker import AppearanceTracker, TrackerState, run_tracker

__version__ = "0.1.0"

__all__ = [
    "AdaboostWeightLearner",
    "AdaptiveController",
    "AdaptiveTracker",
    "Appearance",
    "AppearanceTracker",
    "BBox",
    "ContextFeatureExtractor",
    "ContextLearner",
    "ContextSignature",
    "ControllerConfig",
    "Detection",
    "EvalConfig",
    "LearnedDatabase",
    "MetricsReport",
    "OnlineEvaluator",
    "QTClustering",
    "SceneSequence",
    "Track",
    "TrackerParams",
    "TrackerState",
    "build_database",
    "clear_mot",
    "context_distance",
    "cover_rect",
    "coverage_metrics",
    "evaluate_tracks",
    "frame_features",
    "intersection_area",
    "match_cluster",
    "run_controller",
    "run_tracker",
    "segment",
    "union_area",
    "window_signature",
]
