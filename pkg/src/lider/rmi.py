"""Key re-scaling and the two-layer linear-regression location predictor.

A packed hashkey is read as an unsigned integer and min-max mapped into
[0, L-1] where L is the sorted-array length, so model inputs and location
labels share one scale. The predictor is a root linear fit that routes a
key to one of W leaf linear fits; the chosen leaf's output, rounded and
clamped, is the predicted array location.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hashkey import Hashkey


@dataclass(frozen=True)
class KeyRescaler:
    """Min-max map from raw integer keys to the location scale [a, b]."""

    x_min: int
    x_max: int
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.x_min > self.x_max:
            raise ValueError(f"x_min {self.x_min} > x_max {self.x_max}")

    @classmethod
    def fit(cls, keys: np.ndarray, l_array: int) -> KeyRescaler:
        return cls(x_min=int(keys.min()), x_max=int(keys.max()), a=0.0, b=float(l_array - 1))

    def rescale(self, key: Hashkey | int) -> float:
        """Map one key into [a, b]; out-of-range keys clamp to the ends."""
        x = key.value if isinstance(key, Hashkey) else int(key)
        span = self.x_max - self.x_min
        if span == 0:
            return self.a
        x = min(max(x, self.x_min), self.x_max)
        # Python int arithmetic first: exact for keys wider than 53 bits.
        return (x - self.x_min) / span * (self.b - self.a) + self.a

    def rescale_many(self, keys: np.ndarray) -> np.ndarray:
        span = self.x_max - self.x_min
        if span == 0:
            return np.full(len(keys), self.a)
        if self.x_max < (1 << 52):
            x = np.clip(keys.astype(np.float64), float(self.x_min), float(self.x_max))
            return (x - self.x_min) / span * (self.b - self.a) + self.a
        return np.array([self.rescale(int(k)) for k in keys])


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept


def _fit_line(xs: np.ndarray, ys: np.ndarray) -> LinearModel:
    if len(xs) == 1:
        return LinearModel(slope=0.0, intercept=float(ys[0]))
    xm = xs.mean()
    ym = ys.mean()
    dx = xs - xm
    var = float(dx @ dx)
    if var == 0.0:
        return LinearModel(slope=0.0, intercept=float(ym))
    slope = float(dx @ (ys - ym)) / var
    return LinearModel(slope=slope, intercept=float(ym - slope * xm))


@dataclass(frozen=True)
class RmiModel:
    """Root fit plus W leaf fits over [0, L-1]; rescaler may be absent."""

    rescaler: KeyRescaler | None
    root: LinearModel
    leaves: tuple[LinearModel, ...]
    l_array: int

    @property
    def width(self) -> int:
        return len(self.leaves)

    def _leaf_index(self, routed: float) -> int:
        return min(int(routed * self.width / self.l_array), self.width - 1)

    def predict_key(self, key: Hashkey | int) -> int:
        """Predict the array location of a packed hashkey value."""
        x = key.value if isinstance(key, Hashkey) else int(key)
        return predict(self, self.rescaler.rescale(x) if self.rescaler else float(x))


def train(
    pairs: list[tuple[float, int]] | np.ndarray,
    width: int,
    l_array: int,
    rescaler: KeyRescaler | None = None,
) -> RmiModel:
    """Fit root and leaves on (key, location) pairs sorted by key.

    The root is a least-squares fit over all pairs; each pair is routed to
    the leaf the root's own prediction selects (the distribution leaves see
    at query time), and empty leaves inherit the root's parameters.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if l_array < 1:
        raise ValueError(f"l_array must be >= 1, got {l_array}")
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot train on an empty pair list")
    xs = np.ascontiguousarray(arr[:, 0])
    ys = np.ascontiguousarray(arr[:, 1])

    root = _fit_line(xs, ys)
    routed = np.clip(root.slope * xs + root.intercept, 0.0, l_array - 1)
    leaf_idx = np.minimum((routed * width / l_array).astype(np.int64), width - 1)
    leaves = []
    for i in range(width):
        mask = leaf_idx == i
        leaves.append(_fit_line(xs[mask], ys[mask]) if mask.any() else root)
    return RmiModel(rescaler=rescaler, root=root, leaves=tuple(leaves), l_array=l_array)


def _round_half_away(x: float) -> int:
    return math.floor(x + 0.5) if x >= 0 else math.ceil(x - 0.5)


def predict(model: RmiModel, key: float) -> int:
    """Route through root to one leaf; round and clamp into [0, L-1]."""
    if not math.isfinite(key):
        raise ValueError(f"key must be finite, got {key}")
    routed = min(max(model.root(key), 0.0), model.l_array - 1)
    out = model.leaves[model._leaf_index(routed)](key)
    return min(max(_round_half_away(out), 0), model.l_array - 1)


def predict_many(model: RmiModel, keys: np.ndarray) -> np.ndarray:
    """Vectorized ``predict`` over an array of float keys."""
    keys = np.asarray(keys, dtype=np.float64)
    if not np.isfinite(keys).all():
        raise ValueError("keys must be finite")
    routed = np.clip(model.root.slope * keys + model.root.intercept, 0.0, model.l_array - 1)
    leaf_idx = np.minimum((routed * model.width / model.l_array).astype(np.int64), model.width - 1)
    slopes = np.array([leaf.slope for leaf in model.leaves])
    intercepts = np.array([leaf.intercept for leaf in model.leaves])
    out = slopes[leaf_idx] * keys + intercepts[leaf_idx]
    rounded = np.where(out >= 0, np.floor(out + 0.5), np.ceil(out - 0.5))
    return np.clip(rounded, 0, model.l_array - 1).astype(np.int64)


@dataclass(frozen=True)
class AuditCounts:
    """Prediction-quality tallies over a truth set."""

    n_out_of_range: int  # predictions clamped to an array end (0 or L-1)
    n_large_error: int  # |prediction - true location| above the threshold
    n_overlap: int  # both at once


def prediction_audit(
    model: RmiModel,
    truth: list[tuple[float, int]] | np.ndarray,
    large_error: int = 100,
) -> AuditCounts:
    """Count out-of-range, large-error, and overlapping predictions."""
    arr = np.asarray(truth, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("truth must be non-empty")
    preds = predict_many(model, arr[:, 0])
    true_locs = arr[:, 1].astype(np.int64)
    oor = (preds == 0) | (preds == model.l_array - 1)
    le = np.abs(preds - true_locs) > large_error
    return AuditCounts(
        n_out_of_range=int(oor.sum()),
        n_large_error=int(le.sum()),
        n_overlap=int((oor & le).sum()),
    )
