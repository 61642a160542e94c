"""hierseg: hierarchical-decoding 3D segmentation toolkit for volumetric scans."""

from hierseg.volume import BinaryMask, Box, Volume, crop, flip, pad_to, rotate90

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Box",
    "Volume",
    "crop",
    "flip",
    "pad_to",
    "rotate90",
    "__version__",
]
