import numpy as np
import pytest
import torch

from hierseg.model import (
    ModelConfig,
    SegmentationOutput,
    ShapeError,
    StageSpec,
    build_model,
    count_parameters,
    upsample_factors,
)

DESK = ModelConfig.preset("desk-standard")


def small_input(batch=1, extents=(32, 32, 16), seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(batch, 1, *extents, generator=g)


class TestConfig:
    def test_presets_resolve(self):
        for name in ("standard", "light", "baseline-standard", "baseline-light",
                     "desk-standard", "desk-light", "desk-baseline-standard",
                     "desk-baseline-light"):
            cfg = ModelConfig.preset(name)
            assert len(cfg.tap_stages) == (1 if cfg.is_baseline else 4)

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="preset"):
            ModelConfig.preset("huge")

    def test_hierarchical_requires_four_taps(self):
        cfg = ModelConfig.preset("standard")
        with pytest.raises(ValueError, match="4 tap"):
            ModelConfig(variant="standard", stages=cfg.stages, tap_stages=(2, 3, 4))

    def test_baseline_taps_deepest_only(self):
        cfg = ModelConfig.preset("standard")
        with pytest.raises(ValueError, match="deepest"):
            ModelConfig(variant="baseline-standard", stages=cfg.stages, tap_stages=(2,))

    def test_declared_bottleneck_shapes(self):
        std = ModelConfig.preset("standard")
        assert std.tap_strides[-1] == (8, 32, 32)
        assert std.bottleneck_channels == 1024
        light = ModelConfig.preset("light")
        assert light.tap_strides[-1] == (16, 32, 32)
        assert light.bottleneck_channels == 160

    def test_desk_axial_schedule_divides_48(self):
        for name in ("desk-standard", "desk-light"):
            cfg = ModelConfig.preset(name)
            assert 48 % cfg.tap_strides[-1][2] == 0
            assert cfg.width_multiplier == pytest.approx(1 / 16)

    def test_stage_spec_validation(self):
        with pytest.raises(ValueError):
            StageSpec(8, (3, 1, 1))
        with pytest.raises(ValueError):
            StageSpec(8, (1, 1, 1), kind="transformer")


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = build_model(DESK, rng_seed=11)
        b = build_model(DESK, rng_seed=11)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = build_model(DESK, rng_seed=1)
        b = build_model(DESK, rng_seed=2)
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_fullwidth_parameter_ratio(self):
        ns = count_parameters(build_model(ModelConfig.preset("standard")))
        nl = count_parameters(build_model(ModelConfig.preset("light")))
        assert 8 <= ns / nl <= 13


class TestEncoder:
    def test_fullwidth_standard_bottleneck_extents(self):
        model = build_model(ModelConfig.preset("standard")).eval()
        with torch.no_grad():
            pyramid = model.encode(torch.zeros(1, 1, 128, 128, 64))
        assert tuple(pyramid[-1].shape) == (1, 1024, 16, 4, 2)

    def test_desk_pyramid_matches_stride_arithmetic(self):
        model = build_model(DESK).eval()
        x = small_input()
        with torch.no_grad():
            pyramid = model.encode(x)
        for feat, cum in zip(pyramid, DESK.tap_strides):
            expected = tuple(n // s for n, s in zip(x.shape[2:], cum))
            assert tuple(feat.shape[2:]) == expected

    def test_indivisible_extent_names_axis(self):
        model = build_model(DESK)
        with pytest.raises(ShapeError, match="axis x"):
            model(torch.zeros(1, 1, 30, 32, 16))


class TestDecoder:
    def test_block_count_equals_max_axis_doublings(self):
        model = build_model(DESK)
        for decoder in model.decoders:
            doublings = int(np.log2(max(decoder.cum_stride)))
            assert decoder.n_blocks == doublings

    def test_upsample_factors_recover_stride(self):
        for cum in [(2, 8, 8), (4, 16, 16), (8, 32, 16), (8, 32, 32), (16, 32, 32)]:
            factors = upsample_factors(cum)
            prod = [1, 1, 1]
            for f in factors:
                prod = [p * fi for p, fi in zip(prod, f)]
            assert tuple(prod) == cum

    def test_wrong_level_extents_rejected(self):
        model = build_model(DESK)
        bad = torch.zeros(1, model.cfg.scaled(DESK.stages[2].channels), 4, 4, 4)
        with pytest.raises(ShapeError, match="decoder 0"):
            model.decode_level(0, bad, input_extents=(32, 32, 16))

    def test_decoder_output_shape(self):
        model = build_model(DESK).eval()
        x = small_input()
        with torch.no_grad():
            pyramid = model.encode(x)
            for i, feat in enumerate(pyramid):
                out = model.decode_level(i, feat, x.shape[2:])
                assert tuple(out.shape) == (1, 2, 32, 32, 16)


class TestFusion:
    def test_identity_selection(self):
        model = build_model(DESK)
        with torch.no_grad():
            model.fusion.weight.zero_()
            model.fusion.bias.zero_()
            # select intermediate #1's two channels identically
            model.fusion.weight[0, 0, 0, 0, 0] = 1.0
            model.fusion.weight[1, 1, 0, 0, 0] = 1.0
        inters = [torch.randn(1, 2, 4, 4, 4) for _ in range(4)]
        fused = model.fuse(inters)
        assert torch.allclose(fused, inters[0], atol=1e-7)

    def test_matches_pervoxel_affine_oracle(self):
        model = build_model(DESK)
        g = torch.Generator().manual_seed(3)
        inters = [torch.randn(1, 2, 3, 3, 3, generator=g) for _ in range(4)]
        fused = model.fuse(inters)
        w = model.fusion.weight.detach().numpy().reshape(2, 8)
        b = model.fusion.bias.detach().numpy()
        stacked = torch.cat(inters, dim=1).numpy()[0]  # (8, 3, 3, 3)
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    expected = w @ stacked[:, i, j, k] + b
                    got = fused[0, :, i, j, k].detach().numpy()
                    assert np.allclose(got, expected, atol=1e-6)

    def test_three_intermediates_rejected(self):
        model = build_model(DESK)
        with pytest.raises(ShapeError, match="4 intermediate"):
            model.fuse([torch.zeros(1, 2, 4, 4, 4)] * 3)

    def test_fusion_linearity(self):
        model = build_model(DESK)
        g = torch.Generator().manual_seed(4)
        inters = [torch.randn(1, 2, 4, 4, 4, generator=g) for _ in range(4)]
        bias = model.fusion.bias.detach().reshape(1, 2, 1, 1, 1)
        once = model.fuse(inters) - bias
        twice = model.fuse([2 * t for t in inters]) - bias
        assert torch.allclose(twice, 2 * once, atol=1e-5)


class TestForward:
    def test_hierarchical_output_contract(self):
        model = build_model(DESK).eval()
        with torch.no_grad():
            out = model(small_input())
        assert isinstance(out, SegmentationOutput)
        assert len(out.intermediate_logits) == 4
        assert tuple(out.final_logits.shape) == (1, 2, 32, 32, 16)
        for t in out.intermediate_logits:
            assert tuple(t.shape) == (1, 2, 32, 32, 16)

    def test_baseline_final_is_sole_decoder_output(self):
        model = build_model(ModelConfig.preset("desk-baseline-standard")).eval()
        with torch.no_grad():
            out = model(small_input())
        assert len(out.intermediate_logits) == 1
        assert out.final_logits is out.intermediate_logits[0]

    def test_forward_deterministic_in_eval(self):
        model = build_model(DESK).eval()
        x = small_input(seed=5)
        with torch.no_grad():
            a = model(x).final_logits
            b = model(x).final_logits
        assert torch.equal(a, b)

    def test_outputs_finite_on_random_batches(self):
        model = build_model(DESK).eval()
        for seed in range(10):
            with torch.no_grad():
                out = model(small_input(seed=seed))
            for t in out.all_logits:
                assert torch.isfinite(t).all()

    def test_light_variant_shapes(self):
        model = build_model(ModelConfig.preset("desk-light")).eval()
        with torch.no_grad():
            out = model(small_input())
        assert len(out.intermediate_logits) == 4
        assert tuple(out.final_logits.shape) == (1, 2, 32, 32, 16)
