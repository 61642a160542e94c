import math

import numpy as np
import pytest
import torch

from hierseg.losses import (
    DEFAULT_EPS,
    foreground_probability,
    hierarchical_loss,
    loss_gradient_check,
    soft_dice,
)
from hierseg.model import SegmentationOutput

BIG = 20.0  # logit magnitude giving probabilities within ~1e-9 of binary


def logits_for_mask(mask: torch.Tensor) -> torch.Tensor:
    """(1, 2, x, y, z) logits whose softmax foreground is ~mask."""
    fg = mask.float() * 2 * BIG - BIG
    return torch.stack([-fg, fg], dim=0).unsqueeze(0)


def random_case(seed, shape=(2, 2, 2)):
    g = torch.Generator().manual_seed(seed)
    inters = tuple(torch.randn(1, 2, *shape, generator=g, dtype=torch.float64)
                   for _ in range(4))
    final = torch.randn(1, 2, *shape, generator=g, dtype=torch.float64)
    gt = (torch.rand(1, *shape, generator=g) > 0.5).double()
    return SegmentationOutput(final_logits=final, intermediate_logits=inters), gt


def brute_force_gain(out: SegmentationOutput, gt: torch.Tensor, eps: float) -> float:
    """Term-by-term evaluation of the multi-part Dice gain with plain floats."""
    gt_flat = gt.reshape(-1).tolist()
    total = 0.0
    for logits in out.all_logits:
        bg = logits[0, 0].reshape(-1).tolist()
        fg = logits[0, 1].reshape(-1).tolist()
        num = den_p = den_g = 0.0
        for b, f, g in zip(bg, fg, gt_flat):
            p = math.exp(f) / (math.exp(f) + math.exp(b))
            num += p * g
            den_p += p * p
            den_g += g * g
        total += (2.0 * num + eps) / (den_p + den_g + eps)
    return total


class TestSoftDice:
    def test_perfect_binary_overlap(self):
        mask = (torch.rand(4, 4, 4, generator=torch.Generator().manual_seed(0)) > 0.5).float()
        assert float(soft_dice(mask, mask)) == pytest.approx(1.0, abs=1e-9)

    def test_empty_prediction_on_nonempty_gt(self):
        gt = torch.zeros(4, 4, 4)
        gt[:2] = 1.0
        n_fg = float(gt.sum())
        expected = DEFAULT_EPS / (n_fg + DEFAULT_EPS)
        assert float(soft_dice(torch.zeros(4, 4, 4), gt)) == pytest.approx(expected, rel=1e-6)

    def test_uniform_half_hand_value(self):
        # 8 voxels at p=0.5 against 4 foreground: (2*0.5*4+eps)/(8*0.25+4+eps) ~ 2/3
        gt = torch.zeros(2, 2, 2)
        gt[0] = 1.0
        got = float(soft_dice(torch.full((2, 2, 2), 0.5), gt))
        assert got == pytest.approx(4.0 / 6.0, abs=1e-5)

    def test_symmetric_for_binary_pred(self):
        g = torch.Generator().manual_seed(1)
        a = (torch.rand(3, 4, 5, generator=g) > 0.5).float()
        b = (torch.rand(3, 4, 5, generator=g) > 0.7).float()
        assert float(soft_dice(a, b)) == pytest.approx(float(soft_dice(b, a)), abs=1e-9)

    def test_permutation_invariance(self):
        g = torch.Generator().manual_seed(2)
        pred = torch.rand(2, 3, 4, generator=g)
        gt = (torch.rand(2, 3, 4, generator=g) > 0.5).float()
        perm = torch.randperm(24, generator=g)
        pred_p = pred.reshape(-1)[perm].reshape(2, 3, 4)
        gt_p = gt.reshape(-1)[perm].reshape(2, 3, 4)
        assert float(soft_dice(pred, gt)) == pytest.approx(float(soft_dice(pred_p, gt_p)),
                                                           abs=1e-9)

    def test_extent_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            soft_dice(torch.zeros(2, 2, 2), torch.zeros(2, 2, 3))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="\\[0, 1\\]"):
            soft_dice(torch.full((2, 2, 2), 1.5), torch.zeros(2, 2, 2))

    def test_gradient_zero_at_exact_binary_match(self):
        g = torch.Generator().manual_seed(3)
        gt = (torch.rand(3, 3, 3, generator=g) > 0.5).float()
        pred = gt.clone().requires_grad_(True)
        soft_dice(pred, gt).backward()
        assert float(pred.grad.norm()) < 1e-6


class TestHierarchicalLoss:
    def test_perfect_predictions_reach_maximum_gain(self):
        g = torch.Generator().manual_seed(0)
        gt = (torch.rand(4, 4, 4, generator=g) > 0.7).float()
        logits = logits_for_mask(gt)
        out = SegmentationOutput(final_logits=logits,
                                 intermediate_logits=tuple(logits.clone() for _ in range(4)))
        breakdown = hierarchical_loss(out, gt)
        assert float(breakdown.total_gain) == pytest.approx(5.0, abs=1e-6)
        assert float(breakdown.loss) == pytest.approx(0.0, abs=1e-6)

    def test_matches_brute_force_summation(self):
        for seed in range(5):
            out, gt = random_case(seed)
            breakdown = hierarchical_loss(out, gt)
            expected = brute_force_gain(out, gt, DEFAULT_EPS)
            assert float(breakdown.total_gain) == pytest.approx(expected, abs=1e-9)
            assert float(breakdown.loss) == pytest.approx(5.0 - expected, abs=1e-9)

    def test_decomposition_identity(self):
        out, gt = random_case(42)
        b = hierarchical_loss(out, gt)
        resummed = sum(float(d) for d in b.per_decoder_dice) + float(b.final_dice)
        assert float(b.total_gain) == pytest.approx(resummed, abs=1e-9)
        assert float(b.loss) == pytest.approx(5.0 - resummed, abs=1e-9)
        assert 0.0 <= float(b.loss) <= 5.0

    def test_baseline_single_term(self):
        g = torch.Generator().manual_seed(7)
        logits = torch.randn(1, 2, 3, 3, 3, generator=g, dtype=torch.float64)
        gt = (torch.rand(1, 3, 3, 3, generator=g) > 0.5).double()
        out = SegmentationOutput(final_logits=logits, intermediate_logits=(logits,))
        b = hierarchical_loss(out, gt)
        assert b.per_decoder_dice == ()
        assert float(b.loss) == pytest.approx(1.0 - float(b.final_dice), abs=1e-9)

    def test_extent_mismatch_rejected(self):
        out, _ = random_case(0, shape=(4, 4, 4))
        bad_gt = torch.zeros(1, 4, 4, 2)
        with pytest.raises(ValueError, match="mismatch"):
            hierarchical_loss(out, bad_gt)

    def test_batch_averaging(self):
        # two-sample batch: loss equals the mean of per-sample losses
        a, gt_a = random_case(1)
        b, gt_b = random_case(2)
        stacked = SegmentationOutput(
            final_logits=torch.cat([a.final_logits, b.final_logits]),
            intermediate_logits=tuple(torch.cat([x, y]) for x, y in
                                      zip(a.intermediate_logits, b.intermediate_logits)))
        gt = torch.cat([gt_a, gt_b])
        combined = hierarchical_loss(stacked, gt)
        separate = (float(hierarchical_loss(a, gt_a).loss)
                    + float(hierarchical_loss(b, gt_b).loss)) / 2
        assert float(combined.loss) == pytest.approx(separate, abs=1e-9)


class TestGradientCheck:
    def test_matches_finite_differences(self):
        for seed in range(3):
            out, gt = random_case(seed)
            assert loss_gradient_check(out, gt, h=1e-3) < 1e-4

    def test_error_shrinks_with_h(self):
        out, gt = random_case(11)
        coarse = loss_gradient_check(out, gt, h=1e-2)
        fine = loss_gradient_check(out, gt, h=1e-3)
        assert fine < coarse

    def test_near_zero_gradient_at_perfect_prediction(self):
        g = torch.Generator().manual_seed(5)
        gt = (torch.rand(2, 2, 2, generator=g) > 0.5).double()
        logits = logits_for_mask(gt).double()
        leaves = [logits.clone().requires_grad_(True) for _ in range(5)]
        out = SegmentationOutput(final_logits=leaves[4],
                                 intermediate_logits=tuple(leaves[:4]))
        hierarchical_loss(out, gt).loss.backward()
        norm = math.sqrt(sum(float(leaf.grad.pow(2).sum()) for leaf in leaves))
        assert norm < 1e-6

    def test_baseline_output_supported(self):
        g = torch.Generator().manual_seed(9)
        logits = torch.randn(1, 2, 2, 2, 2, generator=g, dtype=torch.float64)
        gt = (torch.rand(1, 2, 2, 2, generator=g) > 0.5).double()
        out = SegmentationOutput(final_logits=logits, intermediate_logits=(logits,))
        assert loss_gradient_check(out, gt, h=1e-3) < 1e-4


def test_foreground_probability_shape_checks():
    with pytest.raises(ValueError):
        foreground_probability(torch.zeros(1, 3, 2, 2, 2))
    p = foreground_probability(torch.zeros(2, 2, 2, 2))
    assert p.shape == (1, 2, 2, 2)
    assert torch.allclose(p, torch.full_like(p, 0.5))
