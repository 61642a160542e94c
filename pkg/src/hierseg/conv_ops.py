"""Separable 3-D convolution semantics and 2D->3D weight inflation.

These are the numerical contracts behind the network's building blocks: a
separable conv is a k x k x 1 in-plane pass followed by a 1 x 1 x k axial
pass (cross-correlation, zero padding, extents preserved at stride 1), and a
2-D kernel inflates to 3-D by stacking ``reps`` copies divided by ``reps``
along the new axial dimension.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from hierseg.volume import Volume


def _check_odd(size: int, what: str) -> None:
    if size % 2 == 0:
        raise ValueError(f"{what} must be odd-sized, got {size}")


def separable_conv3d(v: Volume, spatial_kernel: np.ndarray, axial_kernel: np.ndarray) -> Volume:
    """Per-channel separable filtering: spatial (x, y) pass then axial (z) pass."""
    spatial = np.asarray(spatial_kernel, dtype=np.float64)
    axial = np.asarray(axial_kernel, dtype=np.float64)
    if spatial.ndim != 2 or spatial.shape[0] != spatial.shape[1]:
        raise ValueError(f"spatial kernel must be square 2-D, got shape {spatial.shape}")
    if axial.ndim != 1:
        raise ValueError(f"axial kernel must be 1-D, got shape {axial.shape}")
    _check_odd(spatial.shape[0], "spatial kernel")
    _check_odd(axial.shape[0], "axial kernel")

    out = np.empty_like(v.values, dtype=np.float64)
    k_spatial = spatial[:, :, np.newaxis]
    k_axial = axial[np.newaxis, np.newaxis, :]
    for c, chan in enumerate(v.values):
        stage = ndimage.correlate(chan.astype(np.float64), k_spatial, mode="constant", cval=0.0)
        out[c] = ndimage.correlate(stage, k_axial, mode="constant", cval=0.0)
    return Volume(out, v.spacing)


def compose_separable_kernel(spatial_kernel: np.ndarray, axial_kernel: np.ndarray) -> np.ndarray:
    """The dense k x k x k kernel equivalent to the separable pair."""
    spatial = np.asarray(spatial_kernel, dtype=np.float64)
    axial = np.asarray(axial_kernel, dtype=np.float64)
    return spatial[:, :, np.newaxis] * axial[np.newaxis, np.newaxis, :]


def inflate_2d_to_3d(kernel2d: np.ndarray, reps: int) -> np.ndarray:
    """Replicate a 2-D kernel ``reps`` times along a new axial axis, divided by reps.

    Accepts bare (k, k) kernels or channelled (out, in, k, k) weights; the
    axial axis is appended last, matching the (x, y, z) layout of this
    package's conv weights.  The total weight sum is preserved.
    """
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    kernel2d = np.asarray(kernel2d, dtype=np.float64)
    if kernel2d.ndim not in (2, 4):
        raise ValueError(f"expected (k, k) or (out, in, k, k) kernel, got shape {kernel2d.shape}")
    stacked = np.repeat(kernel2d[..., np.newaxis], reps, axis=-1)
    return stacked / reps


def inflate_state_dict(state3d: dict, state2d: dict):
    """Inflate matching 2-D conv weights into a 3-D model state dict.

    For every 5-D weight in ``state3d`` whose 2-D counterpart of shape
    (out, in, kx, ky) exists in ``state2d``, the 2-D kernel is replicated
    along the axial axis and divided by the replication count.  Parameters
    of identical shape (biases, norms) are copied.  Returns the new state
    dict and a {key: action} report.
    """
    import torch

    merged = dict(state3d)
    report = {}
    for key, value in state3d.items():
        if key not in state2d:
            report[key] = "missing"
            continue
        src = state2d[key]
        if value.ndim == 5 and src.ndim == 4 and tuple(src.shape) == tuple(value.shape[:4]):
            reps = value.shape[4]
            inflated = inflate_2d_to_3d(src.detach().cpu().numpy(), reps)
            merged[key] = torch.as_tensor(inflated, dtype=value.dtype)
            report[key] = f"inflated x{reps}"
        elif tuple(src.shape) == tuple(value.shape):
            merged[key] = src.detach().clone().to(value.dtype)
            report[key] = "copied"
        else:
            report[key] = "shape mismatch"
    return merged, report
