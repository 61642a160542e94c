"""Synthetic phantom scans with known ground truth.

A phantom is a noisy background plus soft ellipsoidal intensity blobs; one
designated "organ" blob is brighter than the distractors and its half-maximum
support is the ground-truth mask.  Sizes are drawn relative to the volume
extents so the foreground fraction stays in the small-organ regime (roughly
0.7%..3% of voxels) at any resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hierseg.scanio import ScanRecord
from hierseg.volume import BinaryMask, Volume

# half-maximum of exp(-0.5 * rho^2): rho^2 <= 2*ln(2)
HALF_MAX_RHO2 = 2.0 * math.log(2.0)

ORGAN_AMPLITUDE = 1.0
ORGAN_REL_SIZE = (0.10, 0.16)
DISTRACTOR_AMPLITUDE = (0.3, 0.6)
DISTRACTOR_REL_SIZE = (0.08, 0.20)
NOISE_SIGMA = 0.05
BACKGROUND_LEVEL = 0.1
RAMP_AMPLITUDE = 0.05


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    amplitude: float


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    extents: tuple[int, int, int]
    blobs: tuple[Blob, ...]  # blobs[0] is the organ
    ramp_direction: tuple[float, float, float]

    @property
    def organ(self) -> Blob:
        return self.blobs[0]


def draw_phantom_spec(seed: int, extents, n_blobs: int = 3) -> PhantomSpec:
    """Draw blob geometry deterministically for a seed."""
    extents = tuple(int(e) for e in extents)
    if any(e < 16 for e in extents):
        raise ValueError(f"phantom extents must be >= 16 per axis, got {extents}")
    if n_blobs < 1:
        raise ValueError(f"need at least the organ blob, got n_blobs={n_blobs}")
    rng = np.random.default_rng(seed)

    # organ: sized and placed so its half-max support lies fully inside
    semi = tuple(rng.uniform(*ORGAN_REL_SIZE) * e for e in extents)
    margin = tuple(math.sqrt(HALF_MAX_RHO2) * s + 1.0 for s in semi)
    center = tuple(rng.uniform(m, e - m) for m, e in zip(margin, extents))
    blobs = [Blob(center, semi, ORGAN_AMPLITUDE)]

    for _ in range(n_blobs - 1):
        semi = tuple(rng.uniform(*DISTRACTOR_REL_SIZE) * e for e in extents)
        center = tuple(rng.uniform(2.0, e - 2.0) for e in extents)
        amplitude = float(rng.uniform(*DISTRACTOR_AMPLITUDE))
        blobs.append(Blob(center, semi, amplitude))

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return PhantomSpec(seed=seed, extents=extents, blobs=tuple(blobs),
                       ramp_direction=tuple(direction))


def blob_rho2(blob: Blob, extents) -> np.ndarray:
    """Squared scaled distance to the blob centre on the voxel grid."""
    grids = np.meshgrid(*(np.arange(e, dtype=np.float64) for e in extents), indexing="ij")
    rho2 = np.zeros(tuple(extents))
    for g, c, s in zip(grids, blob.center, blob.semi_axes):
        rho2 += ((g - c) / s) ** 2
    return rho2


def render_phantom(spec: PhantomSpec, spacing=(1.0, 1.0, 1.0)) -> ScanRecord:
    """Render a spec into an image + mask ScanRecord."""
    extents = spec.extents
    image = np.full(extents, BACKGROUND_LEVEL, dtype=np.float64)

    # gentle intensity ramp, mimicking residual bias after correction
    grids = np.meshgrid(*(np.linspace(-0.5, 0.5, e) for e in extents), indexing="ij")
    ramp = sum(g * d for g, d in zip(grids, spec.ramp_direction))
    image += RAMP_AMPLITUDE * ramp

    for blob in spec.blobs:
        image += blob.amplitude * np.exp(-0.5 * blob_rho2(blob, extents))

    # noise drawn after geometry so the same seed fixes both
    rng = np.random.default_rng(spec.seed + 1_000_003)
    image += rng.normal(0.0, NOISE_SIGMA, size=extents)

    mask = (blob_rho2(spec.organ, extents) <= HALF_MAX_RHO2).astype(np.uint8)
    return ScanRecord(
        id=f"phantom-{spec.seed:04d}",
        image=Volume(image[np.newaxis].astype(np.float32), spacing),
        mask=BinaryMask(mask, spacing),
        orientation="RAS",
        source_spacing=tuple(float(s) for s in spacing),
    )


def make_phantom(seed: int, extents=(64, 64, 48), n_blobs: int = 3,
                 spacing=(1.0, 1.0, 1.0)) -> ScanRecord:
    """Deterministic synthetic scan with ground truth. Same seed, same scan."""
    return render_phantom(draw_phantom_spec(seed, extents, n_blobs), spacing)
