"""Scan records and NIfTI ingestion.

A ScanRecord pairs a single-channel image volume with an optional ground
truth mask plus the orientation / spacing metadata needed to round-trip the
scan through NIfTI files.  Mask files live next to images by the
``<id>_mask`` naming convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from hierseg import nifti
from hierseg.volume import BinaryMask, Volume

MASK_SUFFIX = "_mask"


class DataError(ValueError):
    """Unreadable or mutually inconsistent scan data."""


@dataclass(frozen=True)
class ScanRecord:
    """A scan: image volume, optional mask, orientation code and source spacing."""

    id: str
    image: Volume
    mask: BinaryMask | None = None
    orientation: str = "RAS"
    source_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.image.channels != 1:
            raise DataError(f"scan {self.id}: image must be single-channel, "
                            f"got {self.image.channels}")
        object.__setattr__(self, "orientation", nifti.validate_axcodes(self.orientation))
        if self.mask is not None and self.mask.extents != self.image.extents:
            raise DataError(
                f"scan {self.id}: mask extents {self.mask.extents} do not match "
                f"image extents {self.image.extents}")

    def with_image(self, image: Volume) -> "ScanRecord":
        return replace(self, image=image)


def _scan_id(image_path) -> str:
    name = Path(image_path).name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return Path(image_path).stem


def load_scan(image_path, mask_path=None) -> ScanRecord:
    """Load an image (and optionally its mask) from NIfTI-1 files.

    Spacing and orientation come from the file affine; mask voxels are
    coerced to {0, 1} with anything above 0.5 mapped to 1.
    """
    try:
        data, affine = nifti.read_nifti(image_path)
    except nifti.NiftiError as exc:
        raise DataError(str(exc)) from exc
    if not np.isfinite(data).all():
        raise DataError(f"{image_path}: image contains non-finite values")
    orientation = nifti.axcodes_from_affine(affine)
    spacing = tuple(float(s) for s in np.linalg.norm(affine[:3, :3], axis=0))
    if any(s <= 0 for s in spacing):
        raise DataError(f"{image_path}: non-positive voxel spacing in affine")
    image = Volume(data[np.newaxis].astype(np.float32), spacing)

    mask = None
    if mask_path is not None:
        try:
            mask_data, _ = nifti.read_nifti(mask_path)
        except nifti.NiftiError as exc:
            raise DataError(str(exc)) from exc
        if mask_data.shape != image.extents:
            raise DataError(
                f"{mask_path}: mask extents {mask_data.shape} do not match "
                f"image extents {image.extents}")
        mask = BinaryMask((mask_data > 0.5).astype(np.uint8), spacing)

    return ScanRecord(id=_scan_id(image_path), image=image, mask=mask,
                      orientation=orientation, source_spacing=spacing)


def save_scan(record: ScanRecord, image_path, mask_path=None) -> None:
    """Write a scan (and its mask, if present and requested) as NIfTI-1."""
    affine = nifti.affine_from_axcodes(record.orientation, record.image.spacing)
    nifti.write_nifti(image_path, record.image.values[0], affine, dtype=np.float32)
    if mask_path is not None:
        if record.mask is None:
            raise DataError(f"scan {record.id} has no mask to save")
        nifti.write_nifti(mask_path, record.mask.values, affine, dtype=np.uint8)


def mask_path_for(image_path) -> Path:
    """Conventional mask filename sitting next to an image file."""
    image_path = Path(image_path)
    name = image_path.name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return image_path.with_name(name[: -len(ext)] + MASK_SUFFIX + ext)
    raise DataError(f"{image_path}: not a NIfTI filename")


def list_scan_images(directory) -> list[Path]:
    """All image NIfTIs in a directory, excluding mask files, sorted by name."""
    directory = Path(directory)
    images = []
    for path in sorted(directory.iterdir()):
        name = path.name
        if not (name.endswith(".nii") or name.endswith(".nii.gz")):
            continue
        if _scan_id(path).endswith(MASK_SUFFIX):
            continue
        images.append(path)
    return images


def load_dataset(directory, require_masks: bool = True) -> list[ScanRecord]:
    """Load every image/mask pair in a directory."""
    records = []
    for image_path in list_scan_images(directory):
        mask_path = mask_path_for(image_path)
        if mask_path.exists():
            records.append(load_scan(image_path, mask_path))
        elif require_masks:
            raise DataError(f"no mask file found for {image_path}")
        else:
            records.append(load_scan(image_path))
    if not records:
        raise DataError(f"no NIfTI scans found in {directory}")
    return records
