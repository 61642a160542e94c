"""Per-scan preprocessing: reorientation, resampling and intensity transforms.

The standard chain applied by the CLI is reorient -> resample to isotropic
spacing -> (MRI only: edge-preserving smoothing + percentile standardization)
-> min/max normalization.  Bias-field correction is expected to have been
applied upstream by external tooling; the toolkit accepts pre-corrected
inputs.

All functions return new ScanRecords; scans can be preprocessed in parallel.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy import ndimage

from hierseg import nifti
from hierseg.filters import bilateral_filter
from hierseg.scanio import ScanRecord
from hierseg.volume import BinaryMask, Volume


class DegenerateInputError(ValueError):
    """An intensity transform hit an input with no usable dynamic range."""


def reorient(s: ScanRecord, target: str) -> ScanRecord:
    """Permute/flip voxel axes so the scan is stored in ``target`` orientation."""
    target = nifti.validate_axcodes(target)
    src_dirs = nifti.axcodes_to_directions(s.orientation)
    dst_dirs = nifti.axcodes_to_directions(target)

    perm = []
    flips = []
    for world, sign in dst_dirs:
        i = next(i for i, (w, _) in enumerate(src_dirs) if w == world)
        perm.append(i)
        flips.append(src_dirs[i][1] != sign)

    def transform(arr: np.ndarray, channel_first: bool) -> np.ndarray:
        off = 1 if channel_first else 0
        axes = ([0] if channel_first else []) + [p + off for p in perm]
        out = np.transpose(arr, axes)
        flip_axes = [j + off for j, f in enumerate(flips) if f]
        if flip_axes:
            out = np.flip(out, axis=flip_axes)
        return np.ascontiguousarray(out)

    spacing = tuple(s.image.spacing[p] for p in perm)
    image = Volume(transform(s.image.values, True), spacing)
    mask = None
    if s.mask is not None:
        mask = BinaryMask(transform(s.mask.values, False), spacing)
    return replace(s, image=image, mask=mask, orientation=target)


def reorient_ras(s: ScanRecord) -> ScanRecord:
    """Reorient to the RAS axes convention. Idempotent."""
    return reorient(s, "RAS")


def _resample_grid(extents, spacing, target: float):
    """New extents and sampling coordinates: voxel centres at i*spacing."""
    new_extents = tuple(max(1, int(round(n * s / target))) for n, s in zip(extents, spacing))
    axes = [np.arange(n_new) * target / s for n_new, s in zip(new_extents, spacing)]
    grid = np.meshgrid(*axes, indexing="ij")
    return new_extents, np.stack(grid)


def resample_isotropic(s: ScanRecord, target_mm: float = 1.0) -> ScanRecord:
    """Resample to isotropic spacing: trilinear for the image, nearest for the mask.

    The new extent per axis is round(old_extent * old_spacing / target),
    floored at 1, so the physical extent is preserved to within half a voxel.
    """
    if target_mm <= 0:
        raise ValueError(f"target spacing must be > 0, got {target_mm}")
    _, coords = _resample_grid(s.image.extents, s.image.spacing, target_mm)
    spacing = (target_mm,) * 3

    channels = [
        ndimage.map_coordinates(chan.astype(np.float64), coords, order=1, mode="nearest")
        for chan in s.image.values
    ]
    image = Volume(np.stack(channels).astype(np.float32), spacing)
    mask = None
    if s.mask is not None:
        nearest = ndimage.map_coordinates(s.mask.values, coords, order=0, mode="nearest")
        mask = BinaryMask((nearest > 0.5).astype(np.uint8), spacing)
    return replace(s, image=image, mask=mask)


def normalize_minmax(s: ScanRecord) -> ScanRecord:
    """Affinely map image intensities so min -> 0 and max -> 1."""
    values = s.image.values
    lo = float(values.min())
    hi = float(values.max())
    if hi <= lo:
        raise DegenerateInputError(
            f"scan {s.id}: constant image (value {lo}), cannot normalize")
    scaled = ((values - lo) / (hi - lo)).astype(np.float32)
    return s.with_image(Volume(scaled, s.image.spacing))


def standardize_intensity(s: ScanRecord, p_low: float = 1.0, p_high: float = 99.0) -> ScanRecord:
    """Winsorize at two percentiles and map them affinely onto [0, 1].

    A stand-in for scanner-to-scanner MRI intensity standardization: values
    at or below the p_low percentile become 0, values at or above the p_high
    percentile become 1, everything else is linear in between.
    """
    if not (0 <= p_low < p_high <= 100):
        raise ValueError(f"need 0 <= p_low < p_high <= 100, got ({p_low}, {p_high})")
    values = s.image.values
    lo, hi = np.percentile(values, (p_low, p_high))
    if hi <= lo:
        raise DegenerateInputError(
            f"scan {s.id}: percentiles {p_low} and {p_high} coincide at {lo}")
    scaled = np.clip((values - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)
    return s.with_image(Volume(scaled, s.image.spacing))


def smooth_edge_preserving(s: ScanRecord, sigma_spatial: float = 1.0,
                           sigma_range: float = 0.1, backend: str | None = None) -> ScanRecord:
    """Bilateral-style smoothing: Gaussian in space, weighted by intensity range.

    sigma_spatial is in voxels, sigma_range in intensity units.  Constant
    regions are untouched; contrast across step edges larger than a few
    sigma_range survives nearly intact.
    """
    smoothed = bilateral_filter(s.image.values[0], sigma_spatial, sigma_range,
                                backend=backend)
    image = Volume(smoothed[np.newaxis].astype(np.float32), s.image.spacing)
    return s.with_image(image)
