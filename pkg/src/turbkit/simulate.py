"""Procedural turbulence video simulator: coherent simplex tilt + Perlin-driven blur.

Per frame t the clean image is backward-warped by two fractal simplex volumes
(x and y displacement), then blurred with a spatially varying Gaussian whose
sigma field blends a Perlin noise volume with the local tilt magnitude.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import noise
from .videocore import (
    Frame,
    VideoSequence,
    load_frame,
    save_sequence,
    write_raw_volume,
)

log = logging.getLogger(__name__)

TILT_FREQUENCY_RANGE = (0.015, 0.06)

# Salt values separating the x-tilt, y-tilt, and blur noise streams of one seed.
_SALT_TILT_X = 0
_SALT_TILT_Y = 1
_SALT_BLUR = 2


@dataclass(frozen=True)
class TurbulenceParams:
    """Knobs of one simulated degradation; `seed` fully determines the output."""

    tilt_octaves: int = 8
    tilt_frequency: float = 0.03
    tilt_amplitude: float = 2.0
    blur_levels: int = 11
    blur_sigma_max: float = 1.0
    seed: int = 0
    blur_frequency: float | None = None
    blur_octaves: int = 1
    persistence: float = 0.5
    blur_tilt_weight: float = 0.5

    def __post_init__(self):
        lo, hi = TILT_FREQUENCY_RANGE
        if not (lo <= self.tilt_frequency <= hi):
            raise ValueError(
                f"tilt_frequency {self.tilt_frequency} outside supported range [{lo}, {hi}]"
            )
        if self.tilt_octaves < 1:
            raise ValueError("tilt_octaves must be >= 1")
        if self.blur_levels < 2:
            raise ValueError("blur_levels must be >= 2")
        if self.tilt_amplitude < 0 or self.blur_sigma_max < 0:
            raise ValueError("magnitudes must be non-negative")
        if not (0.0 <= self.blur_tilt_weight <= 1.0):
            raise ValueError("blur_tilt_weight must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TurbulenceParams":
        return cls(**d)


@dataclass(frozen=True)
class SimulationGroundTruth:
    """Per-simulation truth fields: tilt displacement volumes and the sigma field."""

    tilt_x: noise.NoiseVolume
    tilt_y: noise.NoiseVolume
    blur_sigma: np.ndarray  # (H, W, T), pixels


def generate_tilt_volumes(
    params: TurbulenceParams, dims: tuple[int, int, int]
) -> tuple[noise.NoiseVolume, noise.NoiseVolume]:
    """Two independent fractal simplex volumes scaled to max |value| == tilt_amplitude."""
    h, w, t = dims
    if h < 1 or w < 1 or t < 1:
        raise ValueError(f"dims must be positive, got {dims}")
    vols = []
    for salt in (_SALT_TILT_X, _SALT_TILT_Y):
        vol = noise.fractal_volume(
            (h, w, t),
            octaves=params.tilt_octaves,
            base_frequency=params.tilt_frequency,
            seed=params.seed,
            kind="simplex",
            persistence=params.persistence,
            salt=salt,
        )
        peak = float(np.abs(vol.values).max())
        scale = params.tilt_amplitude / peak if peak > 0 else 0.0
        vols.append(replace(vol, values=vol.values * np.float32(scale)))
    return vols[0], vols[1]


def warp_frame(frame: Frame, nx_slice: np.ndarray, ny_slice: np.ndarray) -> Frame:
    """Backward warp: out(x, y) = in(x + nx(x, y), y + ny(x, y)), edge-clamped bilinear."""
    nx = np.asarray(nx_slice, dtype=np.float32)
    ny = np.asarray(ny_slice, dtype=np.float32)
    if nx.shape != (frame.height, frame.width) or ny.shape != nx.shape:
        raise ValueError("displacement maps must match frame dimensions")
    if not nx.any() and not ny.any():
        return frame
    yy, xx = np.meshgrid(
        np.arange(frame.height, dtype=np.float32),
        np.arange(frame.width, dtype=np.float32),
        indexing="ij",
    )
    coords = np.stack([yy + ny, xx + nx])
    out = np.empty_like(frame.samples)
    for c in range(frame.channels):
        ndimage.map_coordinates(
            frame.samples[:, :, c], coords, output=out[:, :, c], order=1, mode="nearest"
        )
    return frame.with_samples(out)


def _gaussian(channelwise: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return channelwise.copy()
    return ndimage.gaussian_filter(channelwise, sigma=(sigma, sigma, 0), mode="nearest")


def apply_adaptive_blur(frame: Frame, blur_map: np.ndarray, levels: int = 11) -> Frame:
    """Spatially varying Gaussian blur via a bank of `levels` pre-blurred images.

    Bank sigmas span [0, blur_map.max()]; each pixel linearly interpolates the
    two bracketing bank levels.
    """
    bm = np.asarray(blur_map, dtype=np.float32)
    if bm.shape != (frame.height, frame.width):
        raise ValueError("blur map must match frame dimensions")
    if bm.min() < 0:
        raise ValueError("blur map must be non-negative")
    if levels < 2:
        raise ValueError("levels must be >= 2")
    vmax = float(bm.max())
    if vmax <= 0.0:
        return frame
    sigmas = np.linspace(0.0, vmax, levels)
    bank = np.stack([_gaussian(frame.samples, s) for s in sigmas])
    step = vmax / (levels - 1)
    pos = bm / step
    idx = np.clip(np.floor(pos).astype(np.int64), 0, levels - 2)
    frac = (pos - idx).astype(np.float32)[:, :, None]
    lo = np.take_along_axis(bank, idx[None, :, :, None], axis=0)[0]
    hi = np.take_along_axis(bank, (idx + 1)[None, :, :, None], axis=0)[0]
    return frame.with_samples(lo * (1.0 - frac) + hi * frac)


def _minmax01(v: np.ndarray) -> np.ndarray:
    lo, hi = float(v.min()), float(v.max())
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def blur_sigma_volume(
    params: TurbulenceParams,
    tilt_x: noise.NoiseVolume,
    tilt_y: noise.NoiseVolume,
) -> np.ndarray:
    """Sigma field: blur_sigma_max * clamp01(w * tilt_mag_norm + (1-w) * perlin_norm)."""
    dims = tilt_x.values.shape
    perlin = noise.fractal_volume(
        dims,
        octaves=params.blur_octaves,
        base_frequency=params.blur_frequency or params.tilt_frequency,
        seed=params.seed,
        kind="perlin",
        persistence=params.persistence,
        salt=_SALT_BLUR,
    )
    perlin_norm = _minmax01(perlin.values)
    tilt_norm = _minmax01(np.sqrt(tilt_x.values**2 + tilt_y.values**2))
    w = params.blur_tilt_weight
    mix = np.clip(w * tilt_norm + (1.0 - w) * perlin_norm, 0.0, 1.0)
    return (params.blur_sigma_max * mix).astype(np.float32)


def simulate_sequence(
    clean: VideoSequence, params: TurbulenceParams
) -> tuple[VideoSequence, SimulationGroundTruth]:
    """Degrade a clean sequence with coherent tilt warping and adaptive blur."""
    dims = (clean.height, clean.width, len(clean))
    tilt_x, tilt_y = generate_tilt_volumes(params, dims)
    sigma = blur_sigma_volume(params, tilt_x, tilt_y)
    degraded = []
    for t, frame in enumerate(clean.frames):
        warped = warp_frame(frame, tilt_x.values[:, :, t], tilt_y.values[:, :, t])
        blurred = apply_adaptive_blur(warped, sigma[:, :, t], params.blur_levels)
        degraded.append(blurred.samples)
    out = VideoSequence.from_arrays(degraded, clean.frame_rate)
    return out, SimulationGroundTruth(tilt_x, tilt_y, sigma)


def params_for_severity(severity: float, seed: int, **overrides) -> TurbulenceParams:
    """Map a scalar severity (~max tilt in pixels) onto simulator parameters."""
    base = dict(
        tilt_amplitude=float(severity),
        blur_sigma_max=0.3 * float(severity),
        seed=seed,
    )
    base.update(overrides)
    return TurbulenceParams(**base)


def _volume_to_frames(vol: np.ndarray) -> np.ndarray:
    # (H, W, T) noise layout -> (T, H, W, 1) raw-container layout
    return np.transpose(vol, (2, 0, 1))[:, :, :, None]


def generate_dataset(
    source_dir,
    out_dir,
    count: int,
    severity_range: tuple[float, float] = (1.0, 6.0),
    clip_length: int = 16,
    master_seed: int = 0,
    color_mode: str = "luma",
    workers: int = 1,
) -> dict:
    """Write `count` paired clean/degraded clips plus a JSON manifest.

    Each clip repeats one source image `clip_length` times (static scene),
    degrades it at a severity sampled uniformly from `severity_range`, and
    stores the ground-truth tilt and sigma fields in raw planar containers.
    Per-clip failures are recorded in the manifest without aborting the batch.
    """
    src_root = Path(source_dir)
    if not src_root.is_dir():
        raise FileNotFoundError(f"source directory not found: {src_root}")
    sources = sorted(
        p for p in src_root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if count > 0 and not sources:
        raise ValueError(f"no source images found in {src_root}")
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    lo, hi = severity_range
    if hi < lo:
        raise ValueError("severity_range must be ordered (low, high)")

    def build_one(i: int) -> dict:
        clip_id = f"clip_{i:05d}"
        seed = int(np.random.default_rng([np.uint64(master_seed), np.uint64(i)]).integers(2**31))
        severity = float(
            np.random.default_rng([np.uint64(master_seed), np.uint64(i), np.uint64(1)]).uniform(
                lo, hi
            )
        )
        entry = {"clip_id": clip_id, "seed": seed, "severity": severity}
        t0 = time.perf_counter()
        try:
            source = sources[i % len(sources)]
            params = params_for_severity(severity, seed)
            clean = _load_static_clip(source, clip_length, color_mode)
            degraded, truth = simulate_sequence(clean, params)
            clip_dir = root / clip_id
            clean_dir = clip_dir / "clean"
            degraded_dir = clip_dir / "degraded"
            save_sequence(clean, clean_dir)
            save_sequence(degraded, degraded_dir)
            write_raw_volume(clip_dir / "tilt_x.raw", _volume_to_frames(truth.tilt_x.values))
            write_raw_volume(clip_dir / "tilt_y.raw", _volume_to_frames(truth.tilt_y.values))
            write_raw_volume(clip_dir / "blur.raw", _volume_to_frames(truth.blur_sigma))
            entry.update(
                {
                    "params": params.to_dict(),
                    "source": str(source),
                    "clean_path": str(clean_dir),
                    "degraded_path": str(degraded_dir),
                    "tilt_x_path": str(clip_dir / "tilt_x.raw"),
                    "tilt_y_path": str(clip_dir / "tilt_y.raw"),
                    "blur_path": str(clip_dir / "blur.raw"),
                }
            )
        except Exception as exc:  # surfaced per clip, batch continues
            log.warning("clip %s failed: %s", clip_id, exc)
            entry["error"] = str(exc)
        log.info("clip %s generated in %.2fs", clip_id, time.perf_counter() - t0)
        return entry

    if count == 0:
        clips = []
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            clips = list(pool.map(build_one, range(count)))
    else:
        clips = [build_one(i) for i in range(count)]

    manifest = {"master_seed": master_seed, "severity_range": [lo, hi], "clips": clips}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _load_static_clip(image_path: Path, clip_length: int, color_mode: str) -> VideoSequence:
    frame = load_frame(image_path, color_mode=color_mode)
    return VideoSequence.from_arrays([frame.samples] * clip_length)
