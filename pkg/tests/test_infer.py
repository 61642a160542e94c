from types import SimpleNamespace

import numpy as np
import pytest
import torch

from hierseg.infer import binarize, plan_windows, sliding_infer
from hierseg.model import ModelConfig, SegmentationOutput, build_model
from hierseg.phantom import make_phantom
from hierseg.volume import Volume


class StubModel(torch.nn.Module):
    """Emits constant logits derived from the window content's minimum.

    With a ramp-valued scan the minimum identifies the window origin, which
    makes overlap averaging hand-checkable.
    """

    def __init__(self, scale=1.0):
        super().__init__()
        self.cfg = SimpleNamespace(num_classes=2)
        self.scale = scale

    def forward(self, x):
        fg = torch.full_like(x[:, :1], float(x.min()) * self.scale)
        logits = torch.cat([torch.zeros_like(fg), fg], dim=1)
        return SegmentationOutput(final_logits=logits, intermediate_logits=(logits,))


class TestPlanWindows:
    def test_single_window_when_extents_match(self):
        plan = plan_windows((64, 64, 48), (64, 64, 48), 0.25)
        assert plan.origins == ((0, 0, 0),)

    def test_exact_tiling_448(self):
        plan = plan_windows((448, 64, 48), (256, 64, 48), 0.25)
        assert sorted({o[0] for o in plan.origins}) == [0, 192]

    def test_clamped_final_origin_450(self):
        plan = plan_windows((450, 64, 48), (256, 64, 48), 0.25)
        xs = sorted({o[0] for o in plan.origins})
        assert xs == [0, 192, 194]
        assert xs[-1] + 256 == 450

    def test_coverage_brute_force_random_combos(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            window = tuple(int(rng.integers(2, 9)) for _ in range(3))
            extents = tuple(w + int(rng.integers(0, 20)) for w in window)
            overlap = float(rng.choice([0.0, 0.1, 0.25, 0.5, 0.75]))
            plan = plan_windows(extents, window, overlap)
            cov = np.zeros(extents, dtype=int)
            for o in plan.origins:
                sl = tuple(slice(a, a + w) for a, w in zip(o, window))
                cov[sl] += 1
            assert cov.min() >= 1

    def test_overlap_bounds(self):
        with pytest.raises(ValueError):
            plan_windows((64, 64, 64), (32, 32, 32), 1.0)
        with pytest.raises(ValueError):
            plan_windows((64, 64, 64), (32, 32, 32), -0.1)

    def test_small_extents_need_padding_upstream(self):
        with pytest.raises(ValueError, match="pad"):
            plan_windows((16, 64, 64), (32, 32, 32), 0.25)


class TestSlidingInfer:
    def test_one_window_equals_direct_forward(self):
        model = build_model(ModelConfig.preset("desk-standard"), 0).eval()
        scan = make_phantom(0, (32, 32, 16), 2)
        probs = sliding_infer(model, scan, window=(32, 32, 16), overlap=0.25)
        x = torch.from_numpy(scan.image.values[np.newaxis].astype(np.float32))
        with torch.no_grad():
            direct = torch.softmax(model(x).final_logits, dim=1)[0].numpy()
        assert np.allclose(probs.values, direct, atol=1e-6)

    def test_constant_stub_constant_output(self):
        model = StubModel(scale=0.0).eval()  # fg logit always 0 -> prob 0.5
        scan = make_phantom(1, (20, 20, 20), 1)
        probs = sliding_infer(model, scan, window=(8, 8, 8), overlap=0.25)
        assert np.allclose(probs.values, 0.5)

    def test_origin_dependent_stub_matches_coverage_average(self):
        # ramp scan: window minimum recovers the origin, so expected output is
        # the hand-computed mean of sigmoid(origin value) over covering windows
        extents = (8, 8, 8)
        ramp = np.zeros((1, *extents), dtype=np.float32)
        ramp[0] = np.arange(8, dtype=np.float32)[:, None, None]
        vol = Volume(ramp)
        window, overlap = (4, 8, 8), 0.5
        model = StubModel().eval()
        probs = sliding_infer(model, vol, window=window, overlap=overlap)

        plan = plan_windows(extents, window, overlap)
        acc = np.zeros(extents)
        cnt = np.zeros(extents)
        for o in plan.origins:
            sl = tuple(slice(a, a + w) for a, w in zip(o, window))
            fg = 1.0 / (1.0 + np.exp(-float(ramp[(0, *sl)].min())))
            acc[sl] += fg
            cnt[sl] += 1
        assert np.allclose(probs.values[1], acc / cnt, atol=1e-6)

    def test_pads_and_crops_small_scans(self):
        model = build_model(ModelConfig.preset("desk-standard"), 0).eval()
        scan = make_phantom(2, (24, 32, 16), 1)  # x smaller than window
        probs = sliding_infer(model, scan, window=(32, 32, 16), overlap=0.25)
        assert probs.extents == (24, 32, 16)

    def test_probability_simplex(self):
        model = build_model(ModelConfig.preset("desk-light"), 0).eval()
        scan = make_phantom(3, (32, 64, 32), 2)
        probs = sliding_infer(model, scan, window=(32, 32, 32), overlap=0.25)
        sums = probs.values.sum(axis=0)
        assert np.allclose(sums, 1.0, atol=1e-5)
        assert probs.values.min() >= 0


class TestBinarize:
    def test_majority_foreground(self):
        vals = np.stack([np.full((2, 2, 2), 0.4), np.full((2, 2, 2), 0.6)])
        mask = binarize(Volume(vals.astype(np.float32)))
        assert mask.foreground_count() == 8

    def test_exact_tie_goes_background(self):
        vals = np.full((2, 2, 2, 2), 0.5, dtype=np.float32)
        mask = binarize(Volume(vals))
        assert mask.foreground_count() == 0

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(4)
        fg = rng.random((5, 5, 5)).astype(np.float32)
        vals = np.stack([1.0 - fg, fg])
        mask = binarize(Volume(vals))
        assert np.array_equal(mask.values, (fg > 1.0 - fg).astype(np.uint8))

    def test_requires_two_channels(self):
        with pytest.raises(ValueError):
            binarize(Volume(np.zeros((3, 2, 2, 2), dtype=np.float32)))
