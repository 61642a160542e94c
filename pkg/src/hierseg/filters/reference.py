"""Pure-NumPy reference implementation of the 3-D bilateral filter.

Vectorized over window offsets: one shifted pass per neighbour offset.
Out-of-bounds neighbours are excluded from the weight normaliser, matching
the compiled kernel bit-for-bit up to floating-point associativity.
"""

from __future__ import annotations

import numpy as np


def bilateral3d_numpy(src: np.ndarray, sigma_spatial: float, sigma_range: float,
                      radius: int) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64)
    nx, ny, nz = src.shape
    padded = np.zeros((nx + 2 * radius, ny + 2 * radius, nz + 2 * radius))
    valid = np.zeros_like(padded)
    core = (slice(radius, radius + nx), slice(radius, radius + ny), slice(radius, radius + nz))
    padded[core] = src
    valid[core] = 1.0

    inv2ss = 1.0 / (2.0 * sigma_spatial * sigma_spatial)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)

    acc = np.zeros_like(src)
    norm = np.zeros_like(src)
    offsets = range(-radius, radius + 1)
    for dx in offsets:
        for dy in offsets:
            for dz in offsets:
                w_spatial = np.exp(-(dx * dx + dy * dy + dz * dz) * inv2ss)
                window = (
                    slice(radius + dx, radius + dx + nx),
                    slice(radius + dy, radius + dy + ny),
                    slice(radius + dz, radius + dz + nz),
                )
                neigh = padded[window]
                inside = valid[window]
                diff = neigh - src
                w = w_spatial * np.exp(-diff * diff * inv2sr) * inside
                acc += w * neigh
                norm += w
    return acc / norm
