"""Frame / sequence data model and on-disk I/O (PNG directories, raw float container)."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import cv2
import numpy as np

# Rec.601 luma weights for RGB -> single channel.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float32)

# Raw planar float container: magic, then width/height/channels/frames as
# little-endian uint32, then float32 LE data laid out frame-major,
# channel-plane-major, row-major.
RAW_MAGIC = b"TURBRAW1"
_RAW_HEADER = struct.Struct("<8s4I")

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class Frame:
    """A single image: (H, W, C) float32 samples, C is 1 (luma) or 3 (RGB)."""

    samples: np.ndarray
    index: int = 0

    def __post_init__(self):
        a = np.asarray(self.samples, dtype=np.float32)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W) or (H, W, 1|3) samples, got shape {a.shape}")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "samples", a)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    def plane(self) -> np.ndarray:
        """2D (H, W) view of a single-channel frame."""
        if self.channels != 1:
            raise ValueError("plane() requires a single-channel frame")
        return self.samples[:, :, 0]

    def with_samples(self, samples: np.ndarray, index: int | None = None) -> "Frame":
        return Frame(samples, self.index if index is None else index)


@dataclass(frozen=True)
class VideoSequence:
    """Ordered, immutable frames sharing dimensions; indices contiguous from 0."""

    frames: tuple[Frame, ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("no frames found: sequence must contain at least one frame")
        shape = frames[0].samples.shape
        for f in frames:
            if f.samples.shape != shape:
                raise ValueError(
                    f"dimension mismatch: frame {f.index} is {f.samples.shape}, expected {shape}"
                )
        for i, f in enumerate(frames):
            if f.index != i:
                raise ValueError(f"frame indices must be contiguous from 0; got {f.index} at {i}")
        object.__setattr__(self, "frames", frames)

    @classmethod
    def from_arrays(cls, arrays, frame_rate: float = 30.0) -> "VideoSequence":
        return cls(tuple(Frame(a, i) for i, a in enumerate(arrays)), frame_rate)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> Frame:
        return self.frames[i]

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def channels(self) -> int:
        return self.frames[0].channels

    @cached_property
    def mean_intensity(self) -> np.ndarray:
        """Per-channel mean over all pixels of all frames."""
        return sequence_mean(self)

    def as_volume(self) -> np.ndarray:
        """Stacked copy of all frames: (T, H, W, C) float32."""
        return np.stack([f.samples for f in self.frames], axis=0)


def _frame_sort_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]), path.name) if digits else (-1, path.name)


def load_frame(path, color_mode: str = "luma", index: int = 0) -> Frame:
    """Load one 8-bit image file, normalized so value v maps to exactly v / 255."""
    if color_mode not in ("luma", "rgb"):
        raise ValueError(f"color_mode must be 'luma' or 'rgb', got {color_mode!r}")
    p = Path(path)
    img = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError(f"unreadable frame image: {p}")
    if img.dtype != np.uint8:
        raise ValueError(f"unsupported bit depth {img.dtype} in {p}; only 8-bit supported")
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[:, :, :3]
    if img.ndim == 3:
        img = img[:, :, ::-1]  # BGR -> RGB
    samples = img.astype(np.float32) / 255.0
    if samples.ndim == 2:
        samples = samples[:, :, None]
    if color_mode == "luma" and samples.shape[2] == 3:
        samples = (samples @ LUMA_WEIGHTS)[:, :, None]
    elif color_mode == "rgb" and samples.shape[2] == 1:
        samples = np.repeat(samples, 3, axis=2)
    return Frame(samples, index)


def load_sequence(path, color_mode: str = "luma", frame_rate: float = 30.0) -> VideoSequence:
    """Load a directory of frame images into a normalized [0, 1] sequence.

    Frames are ordered by the trailing digit run in the filename (falling back
    to lexicographic order).
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"frame directory not found: {root}")
    files = sorted(
        (p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES),
        key=_frame_sort_key,
    )
    if not files:
        raise ValueError(f"no frames found in {root}")

    frames = []
    shape = None
    for i, p in enumerate(files):
        frame = load_frame(p, color_mode=color_mode, index=i)
        if shape is None:
            shape = frame.samples.shape
        elif frame.samples.shape != shape:
            raise ValueError(
                f"dimension mismatch: {p} is {frame.samples.shape[:2]}, expected {shape[:2]}"
            )
        frames.append(frame)
    return VideoSequence(tuple(frames), frame_rate)


def save_sequence(seq: VideoSequence, path, pattern: str = "frame_%06d.png") -> list[Path]:
    """Write the sequence as 8-bit PNG frames (quantized by rounding)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for f in seq.frames:
        u8 = np.rint(np.clip(f.samples, 0.0, 1.0) * 255.0).astype(np.uint8)
        if u8.shape[2] == 1:
            img = u8[:, :, 0]
        else:
            img = u8[:, :, ::-1]  # RGB -> BGR
        out = root / (pattern % f.index)
        if not cv2.imwrite(str(out), img):
            raise IOError(f"failed to write {out}")
        written.append(out)
    return written


def sequence_mean(seq: VideoSequence) -> np.ndarray:
    """Arithmetic mean over all pixels of all frames, per channel."""
    acc = np.zeros(seq.channels, dtype=np.float64)
    for f in seq.frames:
        acc += f.samples.reshape(-1, seq.channels).sum(axis=0, dtype=np.float64)
    return (acc / (len(seq) * seq.height * seq.width)).astype(np.float32)


def to_luma(frame: Frame) -> Frame:
    """Rec.601 luma conversion; single-channel frames pass through unchanged."""
    if frame.channels == 1:
        return frame
    return Frame((frame.samples @ LUMA_WEIGHTS)[:, :, None], frame.index)


def write_raw_volume(path, volume: np.ndarray) -> None:
    """Write a (T, H, W, C) float array to the raw planar container."""
    vol = np.asarray(volume, dtype=np.float32)
    if vol.ndim == 3:
        vol = vol[:, :, :, None]
    if vol.ndim != 4:
        raise ValueError(f"expected (T, H, W[, C]) volume, got shape {volume.shape}")
    t, h, w, c = vol.shape
    planar = np.ascontiguousarray(np.transpose(vol, (0, 3, 1, 2)), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, w, h, c, t))
        fh.write(planar.tobytes())


def read_raw_volume(path) -> np.ndarray:
    """Read a raw planar container back into a (T, H, W, C) float32 array."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"raw container not found: {p}")
    with open(p, "rb") as fh:
        header = fh.read(_RAW_HEADER.size)
        if len(header) < _RAW_HEADER.size:
            raise ValueError(f"truncated raw container header in {p}")
        magic, w, h, c, t = _RAW_HEADER.unpack(header)
        if magic != RAW_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {p}; not a raw planar container")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != t * h * w * c:
        raise ValueError(f"raw container payload size mismatch in {p}")
    return np.ascontiguousarray(np.transpose(data.reshape(t, c, h, w), (0, 2, 3, 1)))


def write_raw_sequence(seq: VideoSequence, path) -> None:
    write_raw_volume(path, seq.as_volume())


def read_raw_sequence(path, frame_rate: float = 30.0) -> VideoSequence:
    return VideoSequence.from_arrays(list(read_raw_volume(path)), frame_rate)
