"""Minimal NIfTI-1 file support.

Reads and writes single-file NIfTI-1 volumes (.nii, .nii.gz), consuming only
the header fields this toolkit needs: dim, pixdim, datatype, scl_slope/inter
and the qform/sform orientation.  Written files carry an sform affine and
are byte-deterministic (gzip mtime pinned to 0).
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

_DTYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    256: np.dtype(np.int8),
    512: np.dtype(np.uint16),
    768: np.dtype(np.uint32),
}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}

# letter -> (world axis, direction): R/A/S are the positive directions
_LETTERS = {"R": (0, 1), "L": (0, -1), "A": (1, 1), "P": (1, -1), "S": (2, 1), "I": (2, -1)}


class NiftiError(ValueError):
    """Raised for unreadable or unsupported NIfTI files."""


def _open_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_nifti(path):
    """Read a NIfTI-1 file.

    Returns (data, affine) where data is a 3-D float32 array in (x, y, z)
    voxel order and affine is the 4x4 voxel-to-world matrix (sform preferred,
    then qform, then pixdim scaling).
    """
    try:
        raw = _open_bytes(path)
    except OSError as exc:
        raise NiftiError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: file shorter than a NIfTI-1 header")

    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise NiftiError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiError(f"{path}: bad magic {magic!r}")

    dim = struct.unpack_from(order + "8h", raw, 40)
    (datatype,) = struct.unpack_from(order + "h", raw, 70)
    pixdim = struct.unpack_from(order + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(order + "2h", raw, 252)
    quatern = struct.unpack_from(order + "3f", raw, 256)
    qoffset = struct.unpack_from(order + "3f", raw, 268)
    srow = np.array(struct.unpack_from(order + "12f", raw, 280), dtype=np.float64).reshape(3, 4)

    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise NiftiError(f"{path}: unsupported dimensionality {ndim}")
    shape = dim[1 : 1 + ndim]
    if any(n > 1 for n in shape[3:]):
        raise NiftiError(f"{path}: expected a single 3-D volume, got dims {shape}")
    shape = shape[:3]
    if datatype not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {datatype}")
    dtype = _DTYPES[datatype].newbyteorder(order)

    count = int(np.prod(shape))
    start = int(vox_offset) if vox_offset else VOX_OFFSET
    end = start + count * dtype.itemsize
    if len(raw) < end:
        raise NiftiError(f"{path}: truncated data section")
    data = np.frombuffer(raw[start:end], dtype=dtype).reshape(shape, order="F")
    data = np.asarray(data, dtype=np.float32)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data * np.float32(slope) + np.float32(scl_inter)

    if sform_code > 0:
        affine = np.vstack([srow, [0.0, 0.0, 0.0, 1.0]])
    elif qform_code > 0:
        affine = _qform_affine(quatern, qoffset, pixdim)
    else:
        affine = np.diag([abs(pixdim[1]) or 1.0, abs(pixdim[2]) or 1.0, abs(pixdim[3]) or 1.0, 1.0])
    return data, affine


def _qform_affine(quatern, qoffset, pixdim) -> np.ndarray:
    b, c, d = (float(q) for q in quatern)
    a = np.sqrt(max(0.0, 1.0 - b * b - c * c - d * d))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    qfac = -1.0 if pixdim[0] == -1.0 else 1.0
    scales = np.diag([pixdim[1], pixdim[2], qfac * pixdim[3]])
    affine = np.eye(4)
    affine[:3, :3] = rot @ scales
    affine[:3, 3] = qoffset
    return affine


def write_nifti(path, data: np.ndarray, affine: np.ndarray, dtype=np.float32) -> None:
    """Write a 3-D array as a single-file NIfTI-1 with an sform affine."""
    path = Path(path)
    data = np.asarray(data)
    if data.ndim != 3:
        raise NiftiError(f"can only write 3-D volumes, got shape {data.shape}")
    dtype = np.dtype(dtype)
    if dtype not in _DTYPE_CODES:
        raise NiftiError(f"unsupported output dtype {dtype}")
    affine = np.asarray(affine, dtype=np.float64)
    spacing = np.linalg.norm(affine[:3, :3], axis=0)

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, *data.shape, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, _DTYPE_CODES[dtype])
    struct.pack_into("<h", header, 72, dtype.itemsize * 8)
    struct.pack_into("<8f", header, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", header, 112, 1.0, 0.0)  # scl_slope, scl_inter
    struct.pack_into("<2h", header, 252, 0, 1)  # qform_code, sform_code
    struct.pack_into("<12f", header, 280, *affine[:3, :4].ravel())
    header[344:348] = MAGIC

    payload = bytes(header) + b"\x00\x00\x00\x00" + np.asfortranarray(data.astype(dtype)).tobytes(order="F")
    if str(path).endswith(".gz"):
        # filename="" and mtime=0 keep the compressed bytes content-addressable
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


def validate_axcodes(code: str) -> str:
    """Check a 3-letter anatomical orientation code like 'RAS' or 'LPS'."""
    code = str(code).upper()
    if len(code) != 3 or any(ch not in _LETTERS for ch in code):
        raise ValueError(f"invalid orientation code {code!r}")
    axes = [_LETTERS[ch][0] for ch in code]
    if sorted(axes) != [0, 1, 2]:
        raise ValueError(f"orientation code {code!r} does not cover all three axes")
    return code


def axcodes_to_directions(code: str) -> list[tuple[int, int]]:
    """Map a validated code to per-voxel-axis (world axis, sign) pairs."""
    return [_LETTERS[ch] for ch in validate_axcodes(code)]


def affine_from_axcodes(code: str, spacing) -> np.ndarray:
    """Build a voxel-to-world affine for an axis-aligned orientation code."""
    affine = np.zeros((4, 4))
    affine[3, 3] = 1.0
    for i, (world, sign) in enumerate(axcodes_to_directions(code)):
        affine[world, i] = sign * float(spacing[i])
    return affine


def axcodes_from_affine(affine: np.ndarray) -> str:
    """Derive the closest anatomical orientation code from an affine."""
    mat = np.asarray(affine, dtype=np.float64)[:3, :3]
    if not np.isfinite(mat).all():
        raise ValueError("affine contains non-finite entries")
    letters = [None, None, None]
    used: set[int] = set()
    order = np.argsort(-np.abs(mat).max(axis=0))  # strongest columns first
    for j in order:
        col = mat[:, j]
        ranked = np.argsort(-np.abs(col))
        world = next((int(w) for w in ranked if int(w) not in used), None)
        if world is None or col[world] == 0.0:
            raise ValueError("degenerate affine: cannot derive orientation")
        used.add(world)
        positive = "RAS"[world]
        negative = "LPI"[world]
        letters[j] = positive if col[world] > 0 else negative
    return "".join(letters)
