"""Core volumetric data types and index-space operations.

Index convention used throughout the package: volume arrays are laid out as
(channel, x, y, z) where x is width, y is height and z is the slice
(transverse) axis.  Spacing is millimetres per voxel along (x, y, z).

All operations here are pure functions on their inputs; they never mutate
arguments and are safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXES = ("x", "y", "z")


class BoundsError(ValueError):
    """A box or padding target does not fit the volume it is applied to."""


def _axis_index(axis: str) -> int:
    if axis not in AXES:
        raise ValueError(f"invalid axis {axis!r}, expected one of {AXES}")
    return AXES.index(axis)


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(spacing)}")
    if any(s <= 0 for s in spacing):
        raise ValueError(f"spacing components must be > 0, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """A (channel, x, y, z) array of finite scalars with voxel spacing in mm."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 4:
            raise ValueError(f"volume values must be 4-D (c, x, y, z), got shape {values.shape}")
        if any(n < 1 for n in values.shape):
            raise ValueError(f"all extents must be >= 1, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        """Spatial extents (x, y, z)."""
        return self.values.shape[1:]


@dataclass(frozen=True)
class BinaryMask:
    """A (x, y, z) array with entries in {0, 1} and voxel spacing in mm."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"mask values must be 3-D (x, y, z), got shape {values.shape}")
        if not np.isin(values, (0, 1)).all():
            raise ValueError("mask entries must be exactly 0 or 1")
        object.__setattr__(self, "values", values.astype(np.uint8, copy=False))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.values.shape

    def foreground_count(self) -> int:
        return int(self.values.sum())

    def to_volume(self) -> Volume:
        """View the mask as a 1-channel float volume (for shared spatial ops)."""
        return Volume(self.values[np.newaxis].astype(np.float32), self.spacing)

    @classmethod
    def from_volume(cls, vol: Volume) -> "BinaryMask":
        return cls((vol.values[0] > 0.5).astype(np.uint8), vol.spacing)


@dataclass(frozen=True)
class Box:
    """An axis-aligned region of voxel index space: origin plus size, in (x, y, z)."""

    origin: tuple[int, int, int]
    size: tuple[int, int, int]

    def __post_init__(self):
        origin = tuple(int(o) for o in self.origin)
        size = tuple(int(s) for s in self.size)
        if len(origin) != 3 or len(size) != 3:
            raise ValueError("box origin and size must have 3 components")
        if any(o < 0 for o in origin):
            raise ValueError(f"box origin must be >= 0, got {origin}")
        if any(s < 1 for s in size):
            raise ValueError(f"box size must be >= 1, got {size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "size", size)

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.size))


def crop(v: Volume, b: Box) -> Volume:
    """Extract the sub-volume covered by ``b``.

    Raises BoundsError naming the offending axis if the box does not lie
    fully inside the volume.
    """
    for ax, o, s, n in zip(AXES, b.origin, b.size, v.extents):
        if o + s > n:
            raise BoundsError(
                f"box exceeds volume on axis {ax}: origin {o} + size {s} > extent {n}")
    sx, sy, sz = b.slices
    return Volume(v.values[:, sx, sy, sz].copy(), v.spacing)


def pad_to(v: Volume, target, fill: float = 0.0) -> tuple[Volume, Box]:
    """Pad to ``target`` extents with ``fill``, original content at origin 0.

    Returns the padded volume and the Box locating the original content, so
    that ``crop(padded, box)`` recovers the input exactly.
    """
    target = tuple(int(t) for t in target)
    for ax, t, n in zip(AXES, target, v.extents):
        if t < n:
            raise BoundsError(f"pad target {t} smaller than extent {n} on axis {ax}")
    pad = [(0, 0)] + [(0, t - n) for t, n in zip(target, v.extents)]
    padded = np.pad(v.values, pad, mode="constant", constant_values=fill)
    return Volume(padded, v.spacing), Box((0, 0, 0), v.extents)


def flip(v: Volume, axis: str) -> Volume:
    """Reverse voxel order along a spatial axis ('x', 'y' or 'z')."""
    return Volume(np.flip(v.values, axis=_axis_index(axis) + 1).copy(), v.spacing)


def rotate90(v: Volume, plane: tuple[str, str] = ("x", "y"), k: int = 1) -> Volume:
    """Rotate by k*90 degrees in the plane spanned by two distinct spatial axes."""
    a, b = (_axis_index(p) for p in plane)
    if a == b:
        raise ValueError(f"rotation plane axes must be distinct, got {plane}")
    if k not in (0, 1, 2, 3):
        raise ValueError(f"k must be in {{0, 1, 2, 3}}, got {k}")
    rotated = np.rot90(v.values, k=k, axes=(a + 1, b + 1)).copy()
    spacing = list(v.spacing)
    if k % 2 == 1:
        spacing[a], spacing[b] = spacing[b], spacing[a]
    return Volume(rotated, tuple(spacing))
