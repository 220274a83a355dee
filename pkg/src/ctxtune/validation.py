"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numbers
from typing import Sequence

import numpy as np

from .model import SceneSequence


def check_weights(weights: Sequence[float], n: int) -> tuple[float, ...]:
    """Return ``weights`` as a tuple of ``n`` non-negative floats with positive sum."""
    arr = np.asarray(weights, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"weights must be finite and non-negative, got {list(arr)}")
    if arr.sum() <= 0:
        raise ValueError("weights must not all be zero")
    return tuple(float(v) for v in arr)


def check_sequence(seq, require_ground_truth: bool = False) -> SceneSequence:
    if not isinstance(seq, SceneSequence):
        raise TypeError(f"expected a SceneSequence, got {type(seq).__name__}")
    if require_ground_truth and not seq.ground_truth:
        raise ValueError(f"sequence {seq.name or '<unnamed>'} has no ground truth")
    return seq


def check_fraction(value: float, name: str, *, open_low: bool = False, open_high: bool = False) -> float:
    """Validate that ``value`` lies in [0, 1], optionally excluding the ends."""
    if not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number")
    lo_ok = value > 0 if open_low else value >= 0
    hi_ok = value < 1 if open_high else value <= 1
    if not (lo_ok and hi_ok):
        lo = "(" if open_low else "["
        hi = ")" if open_high else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return float(value)


def check_positive_int(value: int, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
