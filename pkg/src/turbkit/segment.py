"""Unsupervised motion segmentation from averaged optical flow magnitudes.

The per-pixel mean flow magnitude from a center frame to its N nearest
neighbors separates turbulence jitter (averages toward zero) from genuine
object motion; the neighbor count is chosen to maximize bimodality of the
normalized map, which is then thresholded into a foreground mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .flow import FlowParams, flow_magnitude
from .flowcache import FlowCache
from .videocore import VideoSequence


@dataclass(frozen=True)
class AOFMap:
    """Average-optical-flow map: `values` min-max normalized, `raw` in pixels."""

    values: np.ndarray
    raw: np.ndarray
    n_used: int
    center_index: int

    def __post_init__(self):
        if self.n_used < 1:
            raise ValueError("n_used must be >= 1")
        for name in ("values", "raw"):
            a = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float32))
            a.flags.writeable = False
            object.__setattr__(self, name, a)


@dataclass(frozen=True)
class MotionMask:
    """Boolean foreground labeling (True = dynamic) for one frame."""

    labels: np.ndarray
    threshold: float
    frame_index: int

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.labels, dtype=bool))
        a.flags.writeable = False
        object.__setattr__(self, "labels", a)

    @property
    def empty(self) -> bool:
        return not bool(self.labels.any())


def neighbor_indices(length: int, center: int, n: int) -> list[int]:
    """Up to `n` nearest neighbor indices of `center`, earlier side first on ties."""
    if not (0 <= center < length):
        raise IndexError(f"center {center} out of range for {length} frames")
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    step = 1
    while len(out) < n and (center - step >= 0 or center + step < length):
        if center - step >= 0:
            out.append(center - step)
        if len(out) < n and center + step < length:
            out.append(center + step)
        step += 1
    return out


def _normalize(raw: np.ndarray) -> np.ndarray:
    lo, hi = float(raw.min()), float(raw.max())
    if hi <= lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def average_optical_flow(
    seq: VideoSequence,
    center: int,
    n: int,
    params: FlowParams = FlowParams(),
    cache: FlowCache | None = None,
) -> AOFMap:
    """Mean flow magnitude from the center frame to its n nearest neighbors.

    Requests beyond the clipped window use all available neighbors and record
    the actual count in `n_used`.
    """
    neighbors = neighbor_indices(len(seq), center, n)
    if not neighbors:
        raise ValueError("sequence too short: no neighbors available")
    cache = cache or FlowCache()
    acc = np.zeros((seq.height, seq.width), dtype=np.float64)
    for j in neighbors:
        acc += flow_magnitude(cache.flow(seq, center, j, params))
    raw = (acc / len(neighbors)).astype(np.float32)
    return AOFMap(_normalize(raw), raw, len(neighbors), center)


def aof_objective(aof: AOFMap) -> float:
    """Mean distance of normalized values from 0.5; bimodal maps score near 0.5."""
    return float(np.abs(aof.values.astype(np.float64) - 0.5).mean())


def select_n_opt(
    seq: VideoSequence,
    center: int,
    candidates,
    params: FlowParams = FlowParams(),
    cache: FlowCache | None = None,
) -> int:
    """Neighbor count maximizing the bimodality objective; ties pick the smaller N."""
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    cache = cache or FlowCache()
    best_n, best_score = None, -1.0
    for n in candidates:
        score = aof_objective(average_optical_flow(seq, center, n, params, cache))
        if score > best_score + 1e-12:
            best_n, best_score = n, score
    return best_n


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy**2 + xx**2) <= r**2


def threshold_mask(aof: AOFMap, threshold: float = 0.5, cleanup: int = 3) -> MotionMask:
    """Binarize the normalized AOF, then open+close and fill holes.

    Before morphology the labeling is monotone in the threshold: raising it
    never adds foreground pixels.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    labels = aof.values > threshold
    if cleanup > 0 and labels.any():
        se = _disk(cleanup)
        labels = ndimage.binary_opening(labels, structure=se)
        labels = ndimage.binary_closing(labels, structure=se)
        labels = ndimage.binary_fill_holes(labels)
    return MotionMask(labels, threshold, aof.center_index)


def save_mask(mask: MotionMask, path) -> None:
    """Write as 8-bit PNG, foreground = 255."""
    if not cv2.imwrite(str(path), mask.labels.astype(np.uint8) * 255):
        raise IOError(f"failed to write {path}")


def load_mask(path, threshold: float = 0.5, frame_index: int = 0) -> MotionMask:
    img = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise ValueError(f"unreadable mask image: {path}")
    return MotionMask(img >= 128, threshold, frame_index)
