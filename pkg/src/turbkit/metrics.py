"""Evaluation metrics: PSNR, SSIM, mask IoU, and the line-deviation score.

The line-deviation score measures how far detected straight segments (Canny
edges + probabilistic Hough) tilt away from the nearest axis orientation;
lower means better geometric fidelity of straight scene structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .segment import MotionMask
from .videocore import Frame, VideoSequence


def psnr(a: Frame, b: Frame, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB over all channels; +inf for identical frames."""
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"dimension mismatch: {a.samples.shape} vs {b.samples.shape}")
    mse = float(np.mean((a.samples.astype(np.float64) - b.samples.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    k = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(k, k)
    return kernel / kernel.sum()


def _ssim_plane(x: np.ndarray, y: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    # Local statistics over 'valid' windows only, so borders never bias the mean.
    mu_x = fftconvolve(x, window, mode="valid")
    mu_y = fftconvolve(y, window, mode="valid")
    xx = fftconvolve(x * x, window, mode="valid")
    yy = fftconvolve(y * y, window, mode="valid")
    xy = fftconvolve(x * y, window, mode="valid")
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(
    a: Frame,
    b: Frame,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
    peak: float = 1.0,
) -> float:
    """Mean local SSIM with a Gaussian window; channels averaged."""
    if a.samples.shape != b.samples.shape:
        raise ValueError(f"dimension mismatch: {a.samples.shape} vs {b.samples.shape}")
    if min(a.height, a.width) < window:
        raise ValueError(f"frame smaller than the {window}x{window} SSIM window")
    win = _gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = [
        _ssim_plane(
            a.samples[:, :, c].astype(np.float64),
            b.samples[:, :, c].astype(np.float64),
            win,
            c1,
            c2,
        )
        for c in range(a.channels)
    ]
    return float(np.mean(scores))


def mask_iou(pred: MotionMask, truth: MotionMask) -> float:
    """Intersection over union; two empty masks count as a perfect 1.0."""
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("mask dimensions differ")
    union = np.logical_or(pred.labels, truth.labels).sum()
    if union == 0:
        return 1.0
    inter = np.logical_and(pred.labels, truth.labels).sum()
    return float(inter) / float(union)


@dataclass(frozen=True)
class LineDeviationParams:
    canny_sigma: float = 1.4
    canny_low: float = 0.1  # fraction of the max gradient magnitude
    canny_high: float = 0.3
    hough_threshold: int = 50
    min_line_length: int = 30
    max_line_gap: int = 10
    angle_resolution_deg: float = 1.0
    oblique_cutoff_deg: float = 20.0
    rng_seed: int = 7


@dataclass(frozen=True)
class LineDeviationEntry:
    frame_index: int
    score: float | None  # mean deviation in degrees; None when no segments found
    line_count: int

    @property
    def defined(self) -> bool:
        return self.score is not None


@dataclass(frozen=True)
class LineDeviationReport:
    entries: tuple[LineDeviationEntry, ...]
    rolling_mean: tuple[float, ...]  # trailing window over defined scores
    rolling_std: tuple[float, ...]
    window: int
    params: LineDeviationParams = field(default_factory=LineDeviationParams)

    @property
    def mean(self) -> float:
        scores = [e.score for e in self.entries if e.defined]
        return float(np.mean(scores)) if scores else math.nan

    @property
    def std(self) -> float:
        scores = [e.score for e in self.entries if e.defined]
        return float(np.std(scores)) if scores else math.nan


def detect_edges(plane: np.ndarray, params: LineDeviationParams) -> np.ndarray:
    """Canny edges with hysteresis thresholds relative to the max gradient."""
    smooth = ndimage.gaussian_filter(plane.astype(np.float32), params.canny_sigma, mode="nearest")
    u8 = np.clip(smooth * 255.0, 0, 255).astype(np.uint8)
    gx = cv2.Sobel(u8, cv2.CV_32F, 1, 0, ksize=3)
    gy = cv2.Sobel(u8, cv2.CV_32F, 0, 1, ksize=3)
    # cv2.Canny thresholds the |gx| + |gy| gradient (L2gradient=False)
    scale = float((np.abs(gx) + np.abs(gy)).max())
    if scale <= 0:
        return np.zeros_like(u8)
    return cv2.Canny(u8, params.canny_low * scale, params.canny_high * scale)


def detect_segments(edges: np.ndarray, params: LineDeviationParams) -> np.ndarray:
    """Probabilistic Hough segments as an (N, 4) array of x1, y1, x2, y2."""
    cv2.setRNGSeed(params.rng_seed)
    lines = cv2.HoughLinesP(
        edges,
        rho=1,
        theta=np.deg2rad(params.angle_resolution_deg),
        threshold=params.hough_threshold,
        minLineLength=params.min_line_length,
        maxLineGap=params.max_line_gap,
    )
    if lines is None:
        return np.zeros((0, 4), dtype=np.int32)
    return lines.reshape(-1, 4)


def segment_axis_deviation(segments: np.ndarray) -> np.ndarray:
    """Per-segment angular deviation (degrees) from the nearest of 0 or 90."""
    if len(segments) == 0:
        return np.zeros(0)
    dx = segments[:, 2] - segments[:, 0]
    dy = segments[:, 3] - segments[:, 1]
    theta = np.degrees(np.arctan2(dy, dx))
    folded = np.abs(theta) % 90.0
    return np.minimum(folded, 90.0 - folded)


def line_deviation(
    frame: Frame, params: LineDeviationParams = LineDeviationParams()
) -> LineDeviationEntry:
    """Mean axis deviation of detected segments; undefined when none survive.

    Segments deviating more than the oblique cutoff are treated as genuinely
    diagonal structure and discarded.
    """
    if frame.channels != 1:
        raise ValueError("line_deviation expects a single-channel frame (use to_luma)")
    edges = detect_edges(frame.plane(), params)
    segments = detect_segments(edges, params)
    dev = segment_axis_deviation(segments)
    dev = dev[dev <= params.oblique_cutoff_deg]
    if len(dev) == 0:
        return LineDeviationEntry(frame.index, None, 0)
    return LineDeviationEntry(frame.index, float(dev.mean()), int(len(dev)))


def rolling_line_deviation(
    seq: VideoSequence,
    window: int = 10,
    params: LineDeviationParams = LineDeviationParams(),
) -> LineDeviationReport:
    """Per-frame scores plus trailing rolling mean/std over the defined entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    entries = tuple(line_deviation(f, params) for f in seq.frames)
    defined = [e.score for e in entries if e.defined]
    if not defined:
        raise ValueError("no frame produced a defined line-deviation score")
    means, stds = [], []
    for i in range(len(defined)):
        tail = defined[max(0, i - window + 1) : i + 1]
        means.append(float(np.mean(tail)))
        stds.append(float(np.std(tail)))
    return LineDeviationReport(entries, tuple(means), tuple(stds), window, params)
