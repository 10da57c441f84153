"""Temporal Gaussian stacking of the static background and foreground compositing.

Stacking averages tilt away across a turbulence-strength-sized temporal window
while excluding foreground pixels to avoid ghosting; compositing re-inserts
the live foreground via gradient-domain (Poisson) or Laplacian-pyramid
blending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as sparse_linalg
from scipy import ndimage

from .segment import MotionMask, _disk
from .videocore import Frame, VideoSequence


@dataclass(frozen=True)
class StackedBackground:
    frame: Frame
    window_sigma: float
    window_span: int
    center_index: int


def _exclusion_stack(masks, frame_indices, shape) -> np.ndarray | None:
    """(K, H, W) boolean exclusion (True = foreground) for the contributing frames."""
    if masks is None:
        return None
    if isinstance(masks, MotionMask):
        one = masks.labels
        return np.broadcast_to(one, (len(frame_indices),) + one.shape)
    if isinstance(masks, np.ndarray):
        return np.asarray(masks, dtype=bool)[list(frame_indices)]
    table = {m.frame_index: m.labels for m in masks}
    out = np.zeros((len(frame_indices),) + shape, dtype=bool)
    for row, k in enumerate(frame_indices):
        if k in table:
            out[row] = table[k]
    return out


def gaussian_stack(
    seq: VideoSequence,
    center: int,
    sigma: float,
    masks=None,
) -> StackedBackground:
    """Per-pixel Gaussian-weighted temporal mean around `center`.

    Weights w_k ~ exp(-(k - center)^2 / (2 sigma^2)) over a span of
    2*ceil(3 sigma)+1 frames, renormalized at sequence boundaries. Pixels
    marked foreground in a contributing frame carry zero weight there; pixels
    excluded everywhere fall back to the center frame.

    `masks` may be a single MotionMask, a list of MotionMask (matched by
    frame_index), or a (T, H, W) boolean array.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not (0 <= center < len(seq)):
        raise IndexError(f"center {center} out of range")
    span = 2 * math.ceil(3 * sigma) + 1 if sigma > 0 else 1
    half = span // 2
    idx = list(range(max(0, center - half), min(len(seq), center + half + 1)))
    offsets = np.array(idx, dtype=np.float64) - center
    if sigma > 0:
        weights = np.exp(-(offsets**2) / (2.0 * sigma**2))
    else:
        weights = (offsets == 0).astype(np.float64)
    weights /= weights.sum()

    data = np.stack([seq[k].samples for k in idx]).astype(np.float64)  # (K, H, W, C)
    excl = _exclusion_stack(masks, idx, (seq.height, seq.width))
    if excl is None:
        stacked = np.tensordot(weights, data, axes=1)
    else:
        wmap = weights[:, None, None] * (~excl)
        denom = wmap.sum(axis=0)
        stacked = np.einsum("khw,khwc->hwc", wmap, data)
        safe = denom > 0
        stacked[safe] /= denom[safe][:, None]
        stacked[~safe] = seq[center].samples[~safe]
    return StackedBackground(
        frame=Frame(stacked.astype(np.float32), center),
        window_sigma=sigma,
        window_span=span,
        center_index=center,
    )


def _poisson_region(bg: np.ndarray, fg: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Solve the discrete Poisson equation on `region` with foreground gradients
    and background Dirichlet boundary; returns a full-size copy of bg."""
    h, w = region.shape
    n = int(region.sum())
    idx_map = np.full((h, w), -1, dtype=np.int64)
    ys, xs = np.nonzero(region)
    idx_map[ys, xs] = np.arange(n)

    rows, cols, vals = [], [], []
    diag = np.zeros(n, dtype=np.float64)
    out = bg.copy()
    channels = bg.shape[2]
    rhs = np.zeros((n, channels), dtype=np.float64)

    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        in_grid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        diag += in_grid
        gy, gx = ny[in_grid], nx[in_grid]
        src = idx_map[ys[in_grid], xs[in_grid]]
        # guidance: sum over existing neighbors of (fg_p - fg_q)
        rhs[src] += fg[ys[in_grid], xs[in_grid]] - fg[gy, gx]
        inside = idx_map[gy, gx] >= 0
        rows.extend(src[inside])
        cols.extend(idx_map[gy[inside], gx[inside]])
        vals.extend([-1.0] * int(inside.sum()))
        rhs[src[~inside]] += bg[gy[~inside], gx[~inside]]

    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(diag)
    a = sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))
    solver = sparse_linalg.factorized(a)
    for c in range(channels):
        out[ys, xs, c] = solver(rhs[:, c])
    return out


def _pyramid_blend(
    bg: np.ndarray, fg: np.ndarray, mask: np.ndarray, levels: int, feather_sigma: float
) -> np.ndarray:
    h, w = mask.shape
    levels = max(1, min(levels, int(math.log2(max(min(h, w), 8) / 4))))
    soft = mask.astype(np.float32)
    if feather_sigma > 0:
        soft = ndimage.gaussian_filter(soft, feather_sigma, mode="nearest")

    def gaussian_pyramid(img):
        gp = [img]
        for _ in range(levels - 1):
            gp.append(cv2.pyrDown(gp[-1]))
        return gp

    def as3d(img):
        return img[:, :, None] if img.ndim == 2 else img

    gp_bg = gaussian_pyramid(bg)
    gp_fg = gaussian_pyramid(fg)
    gp_m = gaussian_pyramid(soft)

    blended = None
    influence = None
    for level in range(levels - 1, -1, -1):
        m = as3d(gp_m[level])
        lap_bg = as3d(gp_bg[level])
        lap_fg = as3d(gp_fg[level])
        if level < levels - 1:
            size = (gp_bg[level].shape[1], gp_bg[level].shape[0])
            lap_bg = lap_bg - as3d(cv2.pyrUp(gp_bg[level + 1], dstsize=size))
            lap_fg = lap_fg - as3d(cv2.pyrUp(gp_fg[level + 1], dstsize=size))
            blended = as3d(cv2.pyrUp(blended[:, :, 0] if blended.shape[2] == 1 else blended, dstsize=size))
            influence = cv2.pyrUp(influence, dstsize=size)
        else:
            blended = np.zeros_like(lap_bg)
            influence = np.zeros_like(gp_m[level])
        blended = blended + lap_bg + m * (lap_fg - lap_bg)
        influence = influence + gp_m[level]
    # outside the union of mask supports the blend is algebraically the
    # background; paste it back so those pixels stay bit-identical
    untouched = influence <= 0
    blended[untouched] = bg[untouched]
    return blended


def blend_foreground(
    background: Frame,
    foreground_frame: Frame,
    mask: MotionMask,
    mode: str = "poisson",
    dilate: int = 5,
    pyramid_levels: int = 5,
    feather_sigma: float = 2.0,
) -> Frame:
    """Composite the masked foreground onto the background.

    Poisson mode solves for pixel values matching foreground gradients inside
    the (dilated) mask with background boundary values; pyramid mode blends
    Laplacian pyramids under a feathered mask. Pixels outside the influence of
    the dilated mask are bit-identical to the background.
    """
    if background.samples.shape != foreground_frame.samples.shape:
        raise ValueError("background and foreground dimensions differ")
    if mask.labels.shape != (background.height, background.width):
        raise ValueError("mask dimensions differ from frames")
    if mode not in ("poisson", "pyramid"):
        raise ValueError(f"unknown blend mode {mode!r}")
    if mask.empty:
        return background
    region = mask.labels
    if region.all():
        return foreground_frame
    if dilate > 0:
        region = ndimage.binary_dilation(region, structure=_disk(dilate))
        if region.all():
            return foreground_frame
    bg = background.samples.astype(np.float64)
    fg = foreground_frame.samples.astype(np.float64)
    if mode == "poisson":
        out = _poisson_region(bg, fg, region)
    else:
        out = _pyramid_blend(
            background.samples, foreground_frame.samples, region, pyramid_levels, feather_sigma
        ).astype(np.float64)
    return Frame(np.clip(out, 0.0, 1.0).astype(np.float32), foreground_frame.index)
