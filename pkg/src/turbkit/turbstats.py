"""Turbulence-strength estimation from image statistics and the window mapping.

The Cn^2 proxy is the mean temporal intensity variance divided by the mean
spatial gradient magnitude of the temporal-mean frame, optionally scaled by
optics (pixel field of view, aperture, distance, turbulence constant). The
proxy drives the temporal Gaussian window used for background stacking.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .videocore import VideoSequence


@dataclass(frozen=True)
class OpticalConfig:
    pfov: float  # radians/pixel
    aperture_d: float  # meters
    distance_l: float  # meters
    turbulence_p: float  # dimensionless, scale-dependent

    def __post_init__(self):
        for name in ("pfov", "aperture_d", "distance_l", "turbulence_p"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def factor(self) -> float:
        return self.pfov**2 * self.aperture_d ** (1.0 / 3.0) / (self.distance_l * self.turbulence_p)


class WindowCalibration(NamedTuple):
    cn2_low: float
    cn2_high: float
    sigma_min: float = 1.0
    sigma_max: float = 20.0


@dataclass(frozen=True)
class TurbulenceReport:
    cn2: float
    variance_term: float
    gradient_term: float
    window_sigma: float = 0.0
    window_span: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TurbulenceReport":
        return cls(**json.loads(text))


def estimate_cn2(
    seq: VideoSequence,
    optics: OpticalConfig | None = None,
    mask: np.ndarray | None = None,
) -> TurbulenceReport:
    """Cn^2 proxy of a (background) sequence; order-free in the frames.

    `mask` selects the pixels contributing to both statistics (True = keep),
    e.g. the complement of a motion mask.
    """
    if len(seq) < 2:
        raise ValueError("need at least 2 frames to estimate temporal variance")
    vol = seq.as_volume().astype(np.float64)  # (T, H, W, C)
    variance = vol.var(axis=0)  # per-pixel temporal variance
    mean_frame = vol.mean(axis=0)
    gy, gx = np.gradient(mean_frame, axis=(0, 1))
    grad_mag = np.sqrt(gx**2 + gy**2)
    if mask is not None:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != variance.shape[:2]:
            raise ValueError("mask must match frame dimensions")
        if not sel.any():
            raise ValueError("mask excludes every pixel")
        variance = variance[sel]
        grad_mag = grad_mag[sel]
    variance_term = float(variance.mean())
    gradient_term = float(grad_mag.mean())
    if gradient_term <= 0.0:
        raise ValueError("degenerate gradient: temporal-mean frame is constant")
    factor = optics.factor if optics is not None else 1.0
    return TurbulenceReport(
        cn2=factor * variance_term / gradient_term,
        variance_term=variance_term,
        gradient_term=gradient_term,
    )


def window_from_cn2(
    report: TurbulenceReport, calibration: WindowCalibration
) -> tuple[float, int]:
    """Log-linear map from Cn^2 to (window_sigma, window_span), clamped at the ends."""
    cal = WindowCalibration(*calibration)
    if not (0 < cal.cn2_low < cal.cn2_high) or not (0 < cal.sigma_min <= cal.sigma_max):
        raise ValueError(f"calibration bounds must be ordered and positive, got {cal}")
    if report.cn2 <= cal.cn2_low:
        t = 0.0
    elif report.cn2 >= cal.cn2_high:
        t = 1.0
    else:
        t = (math.log(report.cn2) - math.log(cal.cn2_low)) / (
            math.log(cal.cn2_high) - math.log(cal.cn2_low)
        )
    sigma = cal.sigma_min + t * (cal.sigma_max - cal.sigma_min)
    return sigma, window_span(sigma)


def window_span(sigma: float) -> int:
    return 2 * math.ceil(3 * sigma) + 1


def with_window(report: TurbulenceReport, calibration: WindowCalibration) -> TurbulenceReport:
    sigma, span = window_from_cn2(report, calibration)
    return TurbulenceReport(
        cn2=report.cn2,
        variance_term=report.variance_term,
        gradient_term=report.gradient_term,
        window_sigma=sigma,
        window_span=span,
    )


def calibration_from_simulator(
    reference: np.ndarray,
    sigma_min: float = 1.0,
    sigma_max: float = 20.0,
    mild_amplitude: float = 0.5,
    strong_amplitude: float = 6.0,
    clip_length: int = 12,
    seed: int = 0,
) -> WindowCalibration:
    """Anchor the window map by degrading `reference` at the simulator's mildest
    and strongest presets and measuring the resulting Cn^2 proxies."""
    from .simulate import params_for_severity, simulate_sequence

    ref = np.asarray(reference, dtype=np.float32)
    if ref.ndim == 2:
        ref = ref[:, :, None]
    clean = VideoSequence.from_arrays([ref] * clip_length)
    bounds = []
    for amplitude in (mild_amplitude, strong_amplitude):
        degraded, _ = simulate_sequence(clean, params_for_severity(amplitude, seed))
        bounds.append(estimate_cn2(degraded).cn2)
    lo, hi = bounds
    if hi <= lo:
        hi = lo * 10.0
    return WindowCalibration(lo, hi, sigma_min, sigma_max)
