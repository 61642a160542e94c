"""Multi-part soft Dice objective over the hierarchical decoder outputs.

Each logit volume is turned into a foreground probability by a softmax over
its two channels; every decoder's map and the fused final map contribute one
squared-denominator soft Dice term.  The summed terms form a gain in
[0, n_terms] which we minimize as ``loss = n_terms - gain`` (5 terms for
hierarchical variants, 1 for baseline variants).

Dice is computed per sample over all voxels, then averaged over the batch,
so large samples do not dominate mixed batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from hierseg.model import SegmentationOutput
from hierseg.volume import BinaryMask

DEFAULT_EPS = 1e-5


@dataclass
class LossBreakdown:
    """Per-term Dice values plus the assembled gain and loss (all 0-d tensors)."""

    per_decoder_dice: tuple[torch.Tensor, ...]
    final_dice: torch.Tensor
    total_gain: torch.Tensor
    loss: torch.Tensor

    @property
    def n_terms(self) -> int:
        return len(self.per_decoder_dice) + 1

    def scalars(self) -> dict:
        return {
            "per_decoder_dice": [float(d) for d in self.per_decoder_dice],
            "final_dice": float(self.final_dice),
            "total_gain": float(self.total_gain),
            "loss": float(self.loss),
        }


def _as_spatial_tensor(x, name: str) -> torch.Tensor:
    if isinstance(x, BinaryMask):
        x = x.values
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"{name}: expected tensor, ndarray or BinaryMask, got {type(x)}")
    if x.ndim == 3:
        x = x.unsqueeze(0)
    if x.ndim != 4:
        raise ValueError(f"{name}: expected (batch, x, y, z) values, got shape {tuple(x.shape)}")
    return x


def soft_dice(pred, gt, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Squared-denominator soft Dice: (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).

    ``pred`` holds foreground probabilities in [0, 1]; dice is reduced over
    the spatial axes per sample and averaged over the batch.
    """
    pred = _as_spatial_tensor(pred, "pred")
    gt = _as_spatial_tensor(gt, "gt").to(pred.dtype)
    if pred.shape != gt.shape:
        raise ValueError(f"extent mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    with torch.no_grad():
        lo, hi = float(pred.min()), float(pred.max())
    if lo < -1e-6 or hi > 1 + 1e-6:
        raise ValueError(f"pred values must lie in [0, 1], got range [{lo}, {hi}]")
    dims = (1, 2, 3)
    intersection = (pred * gt).sum(dim=dims)
    denominator = pred.pow(2).sum(dim=dims) + gt.pow(2).sum(dim=dims)
    dice = (2.0 * intersection + eps) / (denominator + eps)
    return dice.mean()


def foreground_probability(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the 2 channels, returning the foreground channel."""
    if logits.ndim == 4:
        logits = logits.unsqueeze(0)
    if logits.ndim != 5 or logits.shape[1] != 2:
        raise ValueError(f"expected (batch, 2, x, y, z) logits, got shape {tuple(logits.shape)}")
    return torch.softmax(logits, dim=1)[:, 1]


def hierarchical_loss(out: SegmentationOutput, gt, eps: float = DEFAULT_EPS) -> LossBreakdown:
    """Sum of soft Dice terms over intermediate maps plus the final map.

    Hierarchical outputs (4 intermediates) yield 4 + 1 terms and
    ``loss = 5 - gain``; baseline outputs (a single decoder map that is also
    the final map) yield the single term and ``loss = 1 - dice``.
    """
    gt_t = _as_spatial_tensor(gt, "gt")
    n_inter = len(out.intermediate_logits)
    if n_inter not in (1, 4):
        raise ValueError(f"expected 1 or 4 intermediate maps, got {n_inter}")

    per_decoder: tuple[torch.Tensor, ...] = ()
    if n_inter == 4:
        per_decoder = tuple(
            soft_dice(foreground_probability(logits), gt_t, eps)
            for logits in out.intermediate_logits)
    final_dice = soft_dice(foreground_probability(out.final_logits), gt_t, eps)

    total_gain = final_dice
    for term in per_decoder:
        total_gain = total_gain + term
    loss = float(len(per_decoder) + 1) - total_gain
    return LossBreakdown(per_decoder_dice=per_decoder, final_dice=final_dice,
                         total_gain=total_gain, loss=loss)


def loss_gradient_check(out: SegmentationOutput, gt, eps: float = DEFAULT_EPS,
                        h: float = 1e-3) -> float:
    """Max relative error between autograd and central finite differences.

    Treats every logit volume as an independent variable, evaluates in
    float64 and compares entry-wise with denominator max(|a|, |f|, 1e-8);
    the floor guards finite-difference noise at near-zero gradient entries.
    Intended for desk-scale volumes (a few voxels per axis).
    """
    baseline = len(out.intermediate_logits) == 1
    leaves = [t.detach().double().clone().requires_grad_(True)
              for t in (out.intermediate_logits if not baseline else out.all_logits[:1])]

    def assemble() -> SegmentationOutput:
        if baseline:
            return SegmentationOutput(final_logits=leaves[0],
                                      intermediate_logits=(leaves[0],))
        final = out.final_logits.detach().double().clone().requires_grad_(True)
        return SegmentationOutput(final_logits=final, intermediate_logits=tuple(leaves))

    output = assemble()
    variables = list(output.intermediate_logits)
    if not baseline:
        variables.append(output.final_logits)

    loss = hierarchical_loss(output, gt, eps).loss
    grads = torch.autograd.grad(loss, variables)

    def loss_at(perturbed) -> float:
        if baseline:
            o = SegmentationOutput(final_logits=perturbed[0],
                                   intermediate_logits=(perturbed[0],))
        else:
            o = SegmentationOutput(final_logits=perturbed[-1],
                                   intermediate_logits=tuple(perturbed[:-1]))
        return float(hierarchical_loss(o, gt, eps).loss)

    max_rel = 0.0
    for vi, var in enumerate(variables):
        flat = var.detach().clone().reshape(-1)
        analytic = grads[vi].reshape(-1)
        for j in range(flat.numel()):
            orig = float(flat[j])
            for sign, store in ((1.0, "plus"), (-1.0, "minus")):
                flat[j] = orig + sign * h
                tensors = [v.detach().clone() for v in variables]
                tensors[vi] = flat.reshape(var.shape)
                if store == "plus":
                    f_plus = loss_at(tensors)
                else:
                    f_minus = loss_at(tensors)
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[j])
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel
