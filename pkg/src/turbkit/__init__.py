"""turbkit: segment-then-restore pipeline for atmospheric-turbulence video.

Stabilization, motion segmentation, turbulence-adaptive background stacking,
blending, classical sharpening, a procedural tilt-and-blur turbulence
simulator, and an evaluation-metric suite.
"""

__version__ = "0.1.0"

import warnings as _warnings

# Harmless numba probe on hosts with an older TBB; the threading layer falls
# back automatically.
_warnings.filterwarnings("ignore", message="The TBB threading layer")

from .videocore import Frame, VideoSequence, load_sequence, save_sequence  # noqa: F401,E402
