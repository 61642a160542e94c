"""Whole-scan inference: sliding windows, overlap averaging, binarization.

Scans smaller than the window are zero-padded and cropped back; every voxel
is covered by at least one window and the output probability at a voxel is
the plain (unweighted) mean of the softmax predictions of all windows
covering it.  Window forwards run serially so accumulation order, and hence
the result, is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from hierseg.scanio import ScanRecord
from hierseg.volume import BinaryMask, Volume, pad_to

DEFAULT_WINDOW = (256, 256, 48)
DEFAULT_OVERLAP = 0.25


@dataclass(frozen=True)
class WindowPlan:
    """Window extents, overlap fraction and the tiling origins over a scan."""

    window: tuple[int, int, int]
    overlap: float
    extents: tuple[int, int, int]
    origins: tuple[tuple[int, int, int], ...]

    @property
    def strides(self) -> tuple[int, int, int]:
        return tuple(max(1, int(round(w * (1.0 - self.overlap)))) for w in self.window)


def _axis_origins(extent: int, window: int, stride: int) -> list[int]:
    last = extent - window
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)  # clamp the final window to the boundary
    return origins


def plan_windows(extents, window=DEFAULT_WINDOW, overlap: float = DEFAULT_OVERLAP) -> WindowPlan:
    """Deterministic tiling of ``extents`` by overlapping windows.

    Stride per axis is round(window * (1 - overlap)); the final origin is
    clamped so the last window ends exactly at the boundary.  Callers pad
    scans smaller than the window before planning.
    """
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must lie in [0, 1), got {overlap}")
    extents = tuple(int(e) for e in extents)
    window = tuple(int(w) for w in window)
    for e, w in zip(extents, window):
        if e < w:
            raise ValueError(
                f"extents {extents} smaller than window {window}; pad the scan first")
    strides = tuple(max(1, int(round(w * (1.0 - overlap)))) for w in window)
    per_axis = [_axis_origins(e, w, s) for e, w, s in zip(extents, window, strides)]
    origins = tuple((x, y, z) for x in per_axis[0] for y in per_axis[1] for z in per_axis[2])
    return WindowPlan(window=window, overlap=float(overlap), extents=extents, origins=origins)


def sliding_infer(model, scan, window=DEFAULT_WINDOW, overlap: float = DEFAULT_OVERLAP) -> Volume:
    """Mean softmax probabilities over all covering windows, at scan resolution.

    Returns a 2-channel probability volume (background, foreground) whose
    channels sum to 1 at every voxel.
    """
    vol = scan.image if isinstance(scan, ScanRecord) else scan
    window = tuple(int(w) for w in window)
    target = tuple(max(n, w) for n, w in zip(vol.extents, window))
    padded, box = pad_to(vol, target, fill=0.0)
    plan = plan_windows(padded.extents, window, overlap)

    num_classes = model.cfg.num_classes
    acc = np.zeros((num_classes, *padded.extents), dtype=np.float64)
    count = np.zeros(padded.extents, dtype=np.int32)

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for origin in plan.origins:
                sl = tuple(slice(o, o + w) for o, w in zip(origin, window))
                tile = padded.values[(slice(None), *sl)]
                x = torch.from_numpy(np.ascontiguousarray(tile, dtype=np.float32)).unsqueeze(0)
                logits = model(x).final_logits
                probs = torch.softmax(logits, dim=1)[0].numpy()
                acc[(slice(None), *sl)] += probs
                count[sl] += 1
    finally:
        if was_training:
            model.train()

    if (count == 0).any():
        raise RuntimeError("window plan left voxels uncovered")  # guarded by construction
    probs = (acc / count).astype(np.float32)
    return Volume(probs[(slice(None), *box.slices)], vol.spacing)


def binarize(prob: Volume) -> BinaryMask:
    """Per-voxel argmax of the 2 channels; exact ties resolve to background."""
    if prob.channels != 2:
        raise ValueError(f"expected a 2-channel probability volume, got {prob.channels}")
    fg = (prob.values[1] > prob.values[0]).astype(np.uint8)
    return BinaryMask(fg, prob.spacing)


def save_montage(image: Volume, mask: BinaryMask, path, max_slices: int = 24) -> None:
    """PNG grid of axial slices with the mask boundary overlaid."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    nz = image.extents[2]
    picks = np.unique(np.linspace(0, nz - 1, min(max_slices, nz)).round().astype(int))
    cols = min(6, len(picks))
    rows = (len(picks) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[len(picks):]:
        ax.axis("off")
    for ax, z in zip(axes, picks):
        ax.imshow(image.values[0, :, :, z].T, cmap="gray", origin="lower")
        if mask.values[:, :, z].any():
            ax.contour(mask.values[:, :, z].T, levels=[0.5], colors="r", linewidths=0.8)
        ax.set_title(f"z={z}", fontsize=7)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
