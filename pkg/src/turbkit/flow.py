"""Dense optical flow: coarse-to-fine Horn-Schunck with incremental warping.

Stands in for a learned estimator behind a pluggable interface; externally
computed fields can be injected through the raw planar container (two
channels: u, v).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .videocore import Frame, read_raw_volume, write_raw_volume

# Neighborhood-average kernel from the classic Horn-Schunck formulation.
_HS_KERNEL = np.array(
    [[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]], dtype=np.float32
)


@dataclass(frozen=True)
class FlowParams:
    levels: int = 4
    scale: float = 0.5
    iterations: int = 50
    smoothness: float = 15.0

    def digest(self) -> str:
        key = f"hs:{self.levels}:{self.scale}:{self.iterations}:{self.smoothness}"
        return hashlib.sha1(key.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement mapping source pixels toward the target frame."""

    u: np.ndarray  # x-component, pixels
    v: np.ndarray  # y-component, pixels
    source_index: int = -1
    target_index: int = -1

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.float32))
        v = np.ascontiguousarray(np.asarray(self.v, dtype=np.float32))
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u/v must be matching 2D arrays, got {u.shape} and {v.shape}")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


def flow_magnitude(field: FlowField) -> np.ndarray:
    """Euclidean displacement magnitude per pixel."""
    return np.sqrt(field.u**2 + field.v**2)


def _as_plane(frame) -> np.ndarray:
    if isinstance(frame, Frame):
        if frame.channels != 1:
            raise ValueError("flow requires single-channel frames (use to_luma)")
        return frame.plane()
    a = np.asarray(frame, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError(f"expected 2D plane, got shape {a.shape}")
    return a


def _warp_toward(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float32), np.arange(w, dtype=np.float32), indexing="ij")
    coords = np.stack([yy + v, xx + u])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _hs_increment(a: np.ndarray, b: np.ndarray, alpha: float, iterations: int):
    # One Horn-Schunck solve for the residual displacement between a and the
    # already-warped b. Intensities are scaled to an 8-bit range so the
    # default smoothness weight keeps its classic meaning.
    ix = 0.5 * (np.gradient(a, axis=1) + np.gradient(b, axis=1))
    iy = 0.5 * (np.gradient(a, axis=0) + np.gradient(b, axis=0))
    it = b - a
    denom = alpha**2 + ix**2 + iy**2
    du = np.zeros_like(a)
    dv = np.zeros_like(a)
    for _ in range(iterations):
        du_bar = ndimage.convolve(du, _HS_KERNEL, mode="nearest")
        dv_bar = ndimage.convolve(dv, _HS_KERNEL, mode="nearest")
        common = (ix * du_bar + iy * dv_bar + it) / denom
        du = du_bar - ix * common
        dv = dv_bar - iy * common
    return du, dv


def compute_flow(a, b, params: FlowParams = FlowParams()) -> FlowField:
    """Dense displacement field mapping `a` pixels toward `b`.

    Deterministic for fixed params; identical inputs produce an exactly zero
    field.
    """
    src_idx = a.index if isinstance(a, Frame) else -1
    dst_idx = b.index if isinstance(b, Frame) else -1
    pa = _as_plane(a) * 255.0
    pb = _as_plane(b) * 255.0
    if pa.shape != pb.shape:
        raise ValueError(f"dimension mismatch: {pa.shape} vs {pb.shape}")

    # Shape ladder, coarsest last; stop before frames get degenerate.
    shapes = [pa.shape]
    for _ in range(params.levels - 1):
        h, w = shapes[-1]
        nh, nw = max(int(round(h * params.scale)), 8), max(int(round(w * params.scale)), 8)
        if (nh, nw) == shapes[-1]:
            break
        shapes.append((nh, nw))

    def at_scale(img, shape):
        if shape == img.shape:
            return img
        return cv2.resize(img, (shape[1], shape[0]), interpolation=cv2.INTER_AREA)

    u = np.zeros(shapes[-1], dtype=np.float32)
    v = np.zeros(shapes[-1], dtype=np.float32)
    for level in range(len(shapes) - 1, -1, -1):
        shape = shapes[level]
        la = at_scale(pa, shape)
        lb = at_scale(pb, shape)
        if u.shape != shape:
            fy = shape[0] / u.shape[0]
            fx = shape[1] / u.shape[1]
            u = cv2.resize(u, (shape[1], shape[0]), interpolation=cv2.INTER_LINEAR) * fx
            v = cv2.resize(v, (shape[1], shape[0]), interpolation=cv2.INTER_LINEAR) * fy
        warped = _warp_toward(lb, u, v)
        du, dv = _hs_increment(la, warped, params.smoothness, params.iterations)
        u = u + du
        v = v + dv
    return FlowField(u, v, src_idx, dst_idx)


def save_flow(field: FlowField, path) -> None:
    """Store u/v as a two-channel raw planar container."""
    write_raw_volume(path, np.stack([field.u, field.v], axis=-1)[None, :, :, :])


def load_flow(path, source_index: int = -1, target_index: int = -1) -> FlowField:
    vol = read_raw_volume(path)
    if vol.shape[0] != 1 or vol.shape[3] != 2:
        raise ValueError(f"expected a 1-frame, 2-channel flow container, got shape {vol.shape}")
    return FlowField(vol[0, :, :, 0], vol[0, :, :, 1], source_index, target_index)
