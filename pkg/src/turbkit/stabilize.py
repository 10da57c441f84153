"""Global translational stabilization via FFT cross-correlation against frame 0.

Frames are sequence-mean subtracted, center-cropped by a border, and matched
against the first frame; the correlation peak inside the +-border lag window
gives the per-frame integer camera shift.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .videocore import Frame, VideoSequence, sequence_mean


@dataclass(frozen=True)
class StabilizationResult:
    offsets: tuple[tuple[int, int], ...]  # per-frame (dx, dy) content shift vs reference
    reference_index: int
    crop_border: int
    stabilized: VideoSequence


def _check_geometry(seq: VideoSequence, crop_border: int) -> None:
    if seq.channels != 1:
        raise ValueError("stabilization operates on single-channel frames (use to_luma)")
    if crop_border < 1:
        raise ValueError("crop_border must be >= 1")
    if 2 * crop_border >= min(seq.width, seq.height):
        raise ValueError(
            f"frame {seq.width}x{seq.height} smaller than 2x crop_border ({crop_border})"
        )


def _correlation_surface(ref_spectrum: np.ndarray, template: np.ndarray, shape) -> np.ndarray:
    # Circular cross-correlation of the reference with the zero-embedded
    # template. For lags within the +-border window it equals the linear
    # correlation exactly (the wrapped partner lags have empty overlap).
    padded = np.zeros(shape, dtype=np.float32)
    padded[: template.shape[0], : template.shape[1]] = template
    return sfft.irfft2(ref_spectrum * np.conj(sfft.rfft2(padded)), s=shape)


def _peak_offset(window: np.ndarray, border: int) -> tuple[int, int]:
    # window[oy, ox] is the correlation at template alignment start (oy, ox);
    # content displacement is border - alignment. Ties resolve to the smallest
    # (|dy|, |dx|, dy, dx).
    peak = window.max()
    ys, xs = np.nonzero(window == peak)
    best = min(
        (abs(border - y), abs(border - x), border - y, border - x)
        for y, x in zip(ys.tolist(), xs.tolist())
    )
    return best[3], best[2]  # (dx, dy)


def estimate_offsets(
    seq: VideoSequence, crop_border: int = 50, workers: int | None = None
) -> list[tuple[int, int]]:
    """Per-frame integer (dx, dy) content displacement relative to frame 0.

    A frame whose content is the reference translated by (a, b) with
    |a|, |b| <= crop_border yields exactly (a, b).
    """
    _check_geometry(seq, crop_border)
    mu = float(sequence_mean(seq)[0])
    ref = seq[0].plane().astype(np.float32) - mu
    shape = ref.shape
    ref_spectrum = sfft.rfft2(ref)
    b = crop_border

    def one(frame: Frame) -> tuple[int, int]:
        tpl = frame.plane().astype(np.float32)[b:-b, b:-b] - mu
        surface = _correlation_surface(ref_spectrum, tpl, shape)
        return _peak_offset(surface[: 2 * b + 1, : 2 * b + 1], b)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, seq.frames))
    return [one(f) for f in seq.frames]


def translate_samples(samples: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift content by (dx, dy) pixels; exposed borders take edge replication."""
    h, w = samples.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return samples[np.ix_(ys, xs)]


def apply_offsets(seq: VideoSequence, offsets) -> VideoSequence:
    """Translate each frame by -(dx, dy) so content aligns with the reference."""
    offsets = list(offsets)
    if len(offsets) != len(seq):
        raise ValueError(f"got {len(offsets)} offsets for {len(seq)} frames")
    frames = [
        Frame(translate_samples(f.samples, -dx, -dy), f.index)
        for f, (dx, dy) in zip(seq.frames, offsets)
    ]
    return VideoSequence(tuple(frames), seq.frame_rate)


def stabilize_sequence(
    seq: VideoSequence,
    crop_border: int = 50,
    luma_seq: VideoSequence | None = None,
    workers: int | None = None,
) -> StabilizationResult:
    """Estimate offsets on `luma_seq` (default: `seq` itself) and undo them on `seq`."""
    from .videocore import to_luma

    if luma_seq is None:
        luma_seq = (
            seq
            if seq.channels == 1
            else VideoSequence(tuple(to_luma(f) for f in seq.frames), seq.frame_rate)
        )
    offsets = estimate_offsets(luma_seq, crop_border, workers=workers)
    return StabilizationResult(
        offsets=tuple(offsets),
        reference_index=0,
        crop_border=crop_border,
        stabilized=apply_offsets(seq, offsets),
    )


def offsets_to_csv(offsets, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "dx", "dy"])
        for i, (dx, dy) in enumerate(offsets):
            writer.writerow([i, dx, dy])
