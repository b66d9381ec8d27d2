"""dualpatch: dual-modal (visible + infrared) adversarial patch toolkit.

Pipeline: evolutionary shape search against an infrared detector, then
gradient-based texture optimization against a visible-spectrum detector
under EOT, evaluated with a person-level attack success rate harness.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .geometry import BitMask, PolygonShape, Rect
from .render import EotConfig, EotTransform, HotParams, ImagePlane, PatchSpec, TextureGrid

__version__ = "0.1.0"

__all__ = [
    "BitMask",
    "EotConfig",
    "EotTransform",
    "HotParams",
    "ImagePlane",
    "KERNEL_BACKEND",
    "PatchSpec",
    "PolygonShape",
    "Rect",
    "TextureGrid",
    "__version__",
]
