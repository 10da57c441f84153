"""End-to-end pipeline: stabilize -> segment -> stack -> blend -> sharpen.

Stages run in a fixed order and can be bypassed individually; a latency report
accounts per-stage wall time per frame. Sharpening is pluggable: two bundled
classical methods plus an external-process hook exchanging frames through the
raw planar container.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy import ndimage

from .flow import FlowParams
from .flowcache import FlowCache
from .segment import MotionMask, average_optical_flow, select_n_opt, threshold_mask
from .stabilize import StabilizationResult, apply_offsets, estimate_offsets
from .stackblend import blend_foreground, gaussian_stack
from .turbstats import (
    TurbulenceReport,
    WindowCalibration,
    calibration_from_simulator,
    estimate_cn2,
    window_from_cn2,
    with_window,
)
from .videocore import (
    Frame,
    VideoSequence,
    read_raw_sequence,
    to_luma,
    write_raw_sequence,
)

# Stage names mirror the per-frame latency accounting of the reference setup.
STAGE_ORDER = (
    "vibration_calc",
    "stabilize",
    "segmentation",
    "gaussian_mean",
    "combine_bg_fg",
    "sharpening",
)


class ConfigError(Exception):
    """Invalid configuration; maps to CLI exit code 2."""


class StageError(Exception):
    """A pipeline stage failed; maps to CLI exit code 3."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline; zero means 'auto' for the sentinel fields."""

    version: int = 1
    # stage toggles (fixed order, individually bypassable)
    enable_stabilize: bool = True
    enable_segment: bool = True
    enable_stack: bool = True
    enable_blend: bool = True
    enable_sharpen: bool = True
    # stabilize
    stabilize_border: int = 50
    # flow
    flow_levels: int = 4
    flow_scale: float = 0.5
    flow_iterations: int = 50
    flow_smoothness: float = 15.0
    flow_cache_capacity: int = 64
    # segment
    segment_threshold: float = 0.5
    segment_candidates: tuple[int, ...] = (2, 4, 8, 16, 32)
    segment_morph_radius: int = 3
    # turbulence window (0 -> calibrate against the simulator presets)
    cn2_low: float = 0.0
    cn2_high: float = 0.0
    sigma_min: float = 1.0
    sigma_max: float = 20.0
    stack_sigma: float = 0.0  # 0 -> derive from cn2
    # blend
    blend_mode: str = "poisson"
    blend_dilate: int = 5
    pyramid_levels: int = 5
    feather_sigma: float = 2.0
    # sharpen
    sharpen_method: str = "unsharp"
    unsharp_amount: float = 0.8
    unsharp_radius: float = 1.5
    wiener_sigma: float = 1.2
    wiener_nsr: float = 0.01
    external_command: str = ""
    # run
    workers: int = 1
    seed: int = 0

    def flow_params(self) -> FlowParams:
        return FlowParams(
            levels=self.flow_levels,
            scale=self.flow_scale,
            iterations=self.flow_iterations,
            smoothness=self.flow_smoothness,
        )

    def validate(self) -> None:
        if self.blend_mode not in ("poisson", "pyramid"):
            raise ConfigError(f"blend_mode must be poisson|pyramid, got {self.blend_mode!r}")
        if self.sharpen_method not in ("unsharp", "wiener", "external"):
            raise ConfigError(
                f"sharpen_method must be unsharp|wiener|external, got {self.sharpen_method!r}"
            )
        if self.sharpen_method == "external" and not self.external_command:
            raise ConfigError("sharpen_method 'external' requires external_command")
        if not (0.0 < self.segment_threshold < 1.0):
            raise ConfigError("segment_threshold must lie in (0, 1)")
        if self.stabilize_border < 1:
            raise ConfigError("stabilize_border must be >= 1")
        if not self.segment_candidates:
            raise ConfigError("segment_candidates must be non-empty")
        if self.unsharp_amount < 0 or self.unsharp_radius <= 0:
            raise ConfigError("unsharp needs amount >= 0 and radius > 0")
        if self.wiener_sigma <= 0 or self.wiener_nsr <= 0:
            raise ConfigError("wiener needs kernel sigma > 0 and noise ratio > 0")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


# TOML layout: section -> {key -> dataclass field}
_TOML_LAYOUT = {
    "stages": {
        "stabilize": "enable_stabilize",
        "segment": "enable_segment",
        "stack": "enable_stack",
        "blend": "enable_blend",
        "sharpen": "enable_sharpen",
    },
    "stabilize": {"border": "stabilize_border"},
    "flow": {
        "levels": "flow_levels",
        "scale": "flow_scale",
        "iterations": "flow_iterations",
        "smoothness": "flow_smoothness",
        "cache_capacity": "flow_cache_capacity",
    },
    "segment": {
        "threshold": "segment_threshold",
        "candidates": "segment_candidates",
        "morph_radius": "segment_morph_radius",
    },
    "turbulence": {
        "cn2_low": "cn2_low",
        "cn2_high": "cn2_high",
        "sigma_min": "sigma_min",
        "sigma_max": "sigma_max",
        "stack_sigma": "stack_sigma",
    },
    "blend": {
        "mode": "blend_mode",
        "dilate": "blend_dilate",
        "pyramid_levels": "pyramid_levels",
        "feather_sigma": "feather_sigma",
    },
    "sharpen": {
        "method": "sharpen_method",
        "unsharp_amount": "unsharp_amount",
        "unsharp_radius": "unsharp_radius",
        "wiener_sigma": "wiener_sigma",
        "wiener_nsr": "wiener_nsr",
        "external_command": "external_command",
    },
    "run": {"workers": "workers", "seed": "seed"},
}


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def config_to_toml(config: PipelineConfig) -> str:
    lines = [f"version = {config.version}", ""]
    for section, keys in _TOML_LAYOUT.items():
        lines.append(f"[{section}]")
        for key, attr in keys.items():
            lines.append(f"{key} = {_toml_value(getattr(config, attr))}")
        lines.append("")
    return "\n".join(lines)


def config_from_toml(path) -> PipelineConfig:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc
    config = PipelineConfig()
    version = doc.pop("version", config.version)
    if version != config.version:
        raise ConfigError(f"unsupported config version {version}")
    kwargs = {}
    for section, table in doc.items():
        layout = _TOML_LAYOUT.get(section)
        if layout is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in table.items():
            attr = layout.get(key)
            if attr is None:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            if attr == "segment_candidates":
                value = tuple(int(v) for v in value)
            kwargs[attr] = value
    try:
        config = replace(config, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


def write_default_config(path) -> None:
    Path(path).write_text(config_to_toml(PipelineConfig()))


@dataclass(frozen=True)
class LatencyReport:
    """Per-stage compute seconds per frame, plus separate I/O accounting."""

    resolution: tuple[int, int]  # (width, height)
    frames: int
    stage_seconds: dict[str, float]  # per frame, enabled stages only, in order
    io_seconds: float = 0.0
    cache_stats: dict | None = None

    @property
    def total_seconds(self) -> float:
        return float(sum(self.stage_seconds.values()))

    def table(self) -> str:
        w, h = self.resolution
        lines = [f"Per-frame latency at {w}x{h} ({self.frames} frames)"]
        for name, sec in self.stage_seconds.items():
            lines.append(f"  {name:<16} {sec:8.4f} s")
        lines.append(f"  {'total':<16} {self.total_seconds:8.4f} s")
        if self.io_seconds:
            lines.append(f"  {'read_convert':<16} {self.io_seconds:8.4f} s (I/O, not in total)")
        return "\n".join(lines)


@dataclass
class PipelineResult:
    restored: VideoSequence
    masks: list[MotionMask] | None
    stabilization: StabilizationResult | None
    turbulence: TurbulenceReport | None
    latency: LatencyReport
    n_opt: int | None = None


def report_latency(result: PipelineResult) -> LatencyReport:
    """Latency accounting of a completed run."""
    return result.latency


def _gaussian_transfer(shape: tuple[int, int], sigma: float) -> np.ndarray:
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    return np.exp(-2.0 * math.pi**2 * sigma**2 * (fx**2 + fy**2))


def sharpen(
    frame: Frame,
    method: str = "unsharp",
    amount: float = 0.8,
    radius: float = 1.5,
    sigma: float = 1.2,
    nsr: float = 0.01,
) -> Frame:
    """Classical sharpening: unsharp masking or Wiener deconvolution.

    Wiener assumes a Gaussian point-spread function of the given sigma and a
    constant noise-to-signal ratio.
    """
    if method == "unsharp":
        if amount < 0 or radius <= 0:
            raise ValueError("unsharp needs amount >= 0 and radius > 0")
        if amount == 0:
            return frame
        blurred = ndimage.gaussian_filter(frame.samples, sigma=(radius, radius, 0), mode="nearest")
        out = frame.samples + amount * (frame.samples - blurred)
    elif method == "wiener":
        if sigma <= 0 or nsr <= 0:
            raise ValueError("wiener needs kernel sigma > 0 and noise ratio > 0")
        h = _gaussian_transfer((frame.height, frame.width), sigma)
        gain = h / (h**2 + nsr)
        out = np.empty_like(frame.samples)
        for c in range(frame.channels):
            spec = sfft.rfft2(frame.samples[:, :, c].astype(np.float64))
            out[:, :, c] = sfft.irfft2(spec * gain, s=(frame.height, frame.width)).astype(
                np.float32
            )
    else:
        raise ValueError(f"unknown sharpen method {method!r}")
    return frame.with_samples(np.clip(out, 0.0, 1.0).astype(np.float32))


def sharpen_external(seq: VideoSequence, command: str) -> VideoSequence:
    """Run an external sharpener: frames in/out via the raw planar container.

    `command` is a shell-style template with {input} and {output} placeholders.
    """
    if "{input}" not in command or "{output}" not in command:
        raise ValueError("external command must contain {input} and {output} placeholders")
    with tempfile.TemporaryDirectory(prefix="turbkit_ext_") as tmp:
        src = Path(tmp) / "input.raw"
        dst = Path(tmp) / "output.raw"
        write_raw_sequence(seq, src)
        argv = [a.format(input=src, output=dst) for a in shlex.split(command)]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(
                f"external sharpener exited {proc.returncode}: {proc.stderr.strip()[:500]}"
            )
        if not dst.is_file():
            raise RuntimeError("external sharpener produced no output container")
        out = read_raw_sequence(dst, seq.frame_rate)
    if (out.height, out.width, len(out)) != (seq.height, seq.width, len(seq)):
        raise RuntimeError("external sharpener changed sequence dimensions")
    return out


def _luma_sequence(seq: VideoSequence) -> VideoSequence:
    if seq.channels == 1:
        return seq
    return VideoSequence(tuple(to_luma(f) for f in seq.frames), seq.frame_rate)


def run_pipeline(input_seq: VideoSequence, config: PipelineConfig) -> PipelineResult:
    """Execute the enabled stages in order; bypassed stages are identity.

    Output frame count always equals input frame count; identical input,
    config, and seed reproduce bit-identical output.
    """
    config.validate()
    timings: dict[str, float] = {}
    cache = FlowCache(config.flow_cache_capacity)
    flow_params = config.flow_params()
    n_frames = len(input_seq)

    def timed(stage: str, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except (ConfigError, StageError):
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        timings[stage] = time.perf_counter() - t0
        return out

    seq = input_seq
    stabilization = None
    if config.enable_stabilize:

        def _estimate():
            return estimate_offsets(
                _luma_sequence(seq), config.stabilize_border, workers=config.workers
            )

        offsets = timed("vibration_calc", _estimate)
        seq = timed("stabilize", lambda: apply_offsets(seq, offsets))
        stabilization = StabilizationResult(
            offsets=tuple(offsets),
            reference_index=0,
            crop_border=config.stabilize_border,
            stabilized=seq,
        )

    masks = None
    n_opt = None
    if config.enable_segment:

        def _segment():
            luma_seq = _luma_sequence(seq)
            feasible = [c for c in config.segment_candidates if c < n_frames] or [
                max(1, n_frames - 1)
            ]
            center = n_frames // 2
            n = select_n_opt(luma_seq, center, feasible, flow_params, cache)
            out = []
            for t in range(n_frames):
                aof = average_optical_flow(luma_seq, t, n, flow_params, cache)
                out.append(
                    threshold_mask(aof, config.segment_threshold, config.segment_morph_radius)
                )
            return n, out

        n_opt, masks = timed("segmentation", _segment)

    turbulence = None
    backgrounds = None
    if config.enable_stack:

        def _stack():
            luma_seq = _luma_sequence(seq)
            bg_sel = None
            mask_arr = None
            if masks is not None:
                mask_arr = np.stack([m.labels for m in masks])
                union = mask_arr.any(axis=0)
                bg_sel = ~union if not union.all() else None
            report = estimate_cn2(luma_seq, mask=bg_sel)
            sigma = config.stack_sigma
            if sigma <= 0:
                if config.cn2_low > 0 and config.cn2_high > config.cn2_low:
                    cal = WindowCalibration(
                        config.cn2_low, config.cn2_high, config.sigma_min, config.sigma_max
                    )
                else:
                    cal = calibration_from_simulator(
                        luma_seq[0].plane(),
                        sigma_min=config.sigma_min,
                        sigma_max=config.sigma_max,
                        seed=config.seed,
                    )
                sigma, _ = window_from_cn2(report, cal)
                report = with_window(report, cal)
            frames = [
                gaussian_stack(seq, t, sigma, mask_arr).frame for t in range(n_frames)
            ]
            return report, frames

        turbulence, backgrounds = timed("gaussian_mean", _stack)

    if config.enable_blend and masks is not None and backgrounds is not None:

        def _blend():
            return [
                blend_foreground(
                    backgrounds[t],
                    seq[t],
                    masks[t],
                    mode=config.blend_mode,
                    dilate=config.blend_dilate,
                    pyramid_levels=config.pyramid_levels,
                    feather_sigma=config.feather_sigma,
                )
                for t in range(n_frames)
            ]

        frames = timed("combine_bg_fg", _blend)
    elif backgrounds is not None:
        frames = backgrounds
    else:
        frames = list(seq.frames)

    if config.enable_sharpen:

        def _sharpen():
            if config.sharpen_method == "external":
                out = sharpen_external(
                    VideoSequence.from_arrays([f.samples for f in frames], seq.frame_rate),
                    config.external_command,
                )
                return list(out.frames)
            return [
                sharpen(
                    f,
                    config.sharpen_method,
                    amount=config.unsharp_amount,
                    radius=config.unsharp_radius,
                    sigma=config.wiener_sigma,
                    nsr=config.wiener_nsr,
                )
                for f in frames
            ]

        frames = timed("sharpening", _sharpen)

    restored = VideoSequence.from_arrays([f.samples for f in frames], input_seq.frame_rate)
    latency = LatencyReport(
        resolution=(input_seq.width, input_seq.height),
        frames=n_frames,
        stage_seconds={k: timings[k] / n_frames for k in STAGE_ORDER if k in timings},
        cache_stats=cache.stats(),
    )
    return PipelineResult(
        restored=restored,
        masks=masks,
        stabilization=stabilization,
        turbulence=turbulence,
        latency=latency,
        n_opt=n_opt,
    )
