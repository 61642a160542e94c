"""Training-time augmentation: flip, in-plane rotation and random crops.

"Horizontal" flipping is along the x (left-right) axis in RAS space and the
90-degree rotations act in the transverse (x, y) plane.  The identical
geometric transform is applied to image and mask; crops are optionally
biased toward containing foreground, which keeps supervision informative on
small-organ volumes (set fg_bias=0 for spec-literal uniform crops).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hierseg.volume import BinaryMask, Box, Volume, crop, flip, pad_to, rotate90


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: tuple[int, int, int] = (128, 128, 48)
    flip: bool = True
    rotate: bool = True
    random_crop: bool = True
    fg_bias: float = 0.5


def _apply_pair(image: Volume, mask: BinaryMask, fn):
    return fn(image), BinaryMask.from_volume(fn(mask.to_volume()))


def augment(image: Volume, mask: BinaryMask, rng: np.random.Generator,
            cfg: AugmentConfig = AugmentConfig()):
    """One augmented (image, mask) crop; deterministic for a given rng state."""
    if mask.extents != image.extents:
        raise ValueError(f"image extents {image.extents} vs mask extents {mask.extents}")

    if cfg.flip and rng.random() < 0.5:
        image, mask = _apply_pair(image, mask, lambda v: flip(v, "x"))
    if cfg.rotate:
        k = int(rng.integers(0, 4))
        if k:
            image, mask = _apply_pair(image, mask, lambda v: rotate90(v, ("x", "y"), k))

    crop_size = tuple(int(c) for c in cfg.crop_size)
    target = tuple(max(n, c) for n, c in zip(image.extents, crop_size))
    if target != image.extents:
        image, _ = pad_to(image, target, fill=0.0)
        mask_vol, _ = pad_to(mask.to_volume(), target, fill=0.0)
        mask = BinaryMask.from_volume(mask_vol)

    origin = _crop_origin(image.extents, crop_size, mask, rng, cfg)
    box = Box(origin, crop_size)
    return crop(image, box), BinaryMask.from_volume(crop(mask.to_volume(), box))


def _crop_origin(extents, crop_size, mask: BinaryMask, rng, cfg: AugmentConfig):
    max_origin = tuple(n - c for n, c in zip(extents, crop_size))
    if not cfg.random_crop:
        return tuple(m // 2 for m in max_origin)
    if cfg.fg_bias > 0 and rng.random() < cfg.fg_bias:
        fg = np.argwhere(mask.values)
        if len(fg):
            voxel = fg[int(rng.integers(0, len(fg)))]
            return tuple(
                int(rng.integers(max(0, v - c + 1), min(m, v) + 1))
                for v, c, m in zip(voxel, crop_size, max_origin))
    return tuple(int(rng.integers(0, m + 1)) for m in max_origin)
