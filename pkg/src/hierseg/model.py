"""Hierarchical-decoding 3D fully convolutional segmentation network.

The encoder aggregates volumetric features through a declarative stage
stack; features tapped at four depths feed independent decoders that each
predict a full-resolution 2-channel segmentation, and a pointwise fusion
layer merges the four intermediate maps into the final one.  Baseline
variants tap only the bottleneck and skip fusion.

Tensor layout is (batch, channel, x, y, z) with x = width, y = height and
z = the slice axis: per-axis strides therefore read as (x, y, z) triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
from torch import nn
from torch.nn import functional as F

VARIANTS = ("standard", "light", "baseline-standard", "baseline-light")


class ShapeError(ValueError):
    """Input extents incompatible with the configured stride schedule."""


@dataclass(frozen=True)
class StageSpec:
    """One encoder stage: output channels, per-axis stride, block type."""

    channels: int
    stride: tuple[int, int, int]
    kind: str = "sep"  # sep | conv | point | ir
    repeats: int = 1
    expand: int = 6  # inverted-residual expansion

    def __post_init__(self):
        if self.kind not in ("sep", "conv", "point", "ir"):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if any(s not in (1, 2) for s in self.stride):
            raise ValueError(f"per-stage strides must be 1 or 2, got {self.stride}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    """Declarative network description; see ``ModelConfig.preset`` for the shipped ones."""

    variant: str
    stages: tuple[StageSpec, ...]
    tap_stages: tuple[int, ...]
    in_channels: int = 1
    num_classes: int = 2
    width_multiplier: float = 1.0
    decoder_widths: tuple[int, ...] = (64, 32, 16, 16, 16)
    sep_per_block: int = 1
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        taps = tuple(int(t) for t in self.tap_stages)
        object.__setattr__(self, "tap_stages", taps)
        if any(t < 0 or t >= len(self.stages) for t in taps):
            raise ValueError(f"tap stage out of range: {taps}")
        if list(taps) != sorted(set(taps)):
            raise ValueError(f"tap stages must be strictly increasing: {taps}")
        expected = 1 if self.is_baseline else 4
        if len(taps) != expected:
            raise ValueError(
                f"variant {self.variant!r} requires exactly {expected} tap stage(s), "
                f"got {len(taps)}")
        if self.is_baseline and taps[-1] != len(self.stages) - 1:
            raise ValueError("baseline variants must tap the deepest stage")
        if not 0 < self.width_multiplier <= 1:
            raise ValueError(f"width multiplier must be in (0, 1], got {self.width_multiplier}")

    @property
    def is_baseline(self) -> bool:
        return self.variant.startswith("baseline")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(s.channels for s in self.stages)

    @property
    def stride_schedule(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(s.stride for s in self.stages)

    def cumulative_stride(self, stage_index: int) -> tuple[int, int, int]:
        cum = [1, 1, 1]
        for spec in self.stages[: stage_index + 1]:
            cum = [c * s for c, s in zip(cum, spec.stride)]
        return tuple(cum)

    @property
    def tap_strides(self) -> tuple[tuple[int, int, int], ...]:
        return tuple(self.cumulative_stride(t) for t in self.tap_stages)

    @property
    def bottleneck_channels(self) -> int:
        return self.scaled(self.stages[self.tap_stages[-1]].channels)

    def scaled(self, channels: int) -> int:
        return max(8, int(round(channels * self.width_multiplier)))

    @staticmethod
    def preset(name: str, **overrides) -> "ModelConfig":
        """Shipped configurations.

        Full-width presets: standard, light, baseline-standard, baseline-light.
        Desk presets prefix ``desk-``: width multiplier 1/16 and an axial
        stride schedule whose cumulative divisor (16) divides 48-slice crops.
        """
        key = name
        desk = key.startswith("desk-")
        if desk:
            key = key[len("desk-") :]
        if key not in VARIANTS:
            raise ValueError(f"unknown preset {name!r}")
        backbone = "light" if key.endswith("light") else "standard"
        stages = _LIGHT_STAGES if backbone == "light" else _STANDARD_STAGES
        taps = _LIGHT_TAPS if backbone == "light" else _STANDARD_TAPS
        if desk:
            stages = _cap_axial_stride(stages, max_cum_z=16)
            overrides.setdefault("width_multiplier", 1.0 / 16.0)
        if key.startswith("baseline"):
            taps = taps[-1:]
        return ModelConfig(variant=key, stages=stages, tap_stages=taps, **overrides)


# Separable-conv stage stack: bottleneck 1024 x W/8 x H/32 x D/32 at full width,
# tapped at the 2nd/3rd/4th downsampling stages plus the bottleneck.
_STANDARD_STAGES = (
    StageSpec(64, (2, 2, 2), "sep"),
    StageSpec(192, (1, 2, 2), "sep"),
    StageSpec(480, (1, 2, 2), "sep"),
    StageSpec(832, (2, 2, 2), "sep"),
    StageSpec(1024, (2, 2, 2), "sep"),
    StageSpec(1024, (1, 1, 1), "point"),
)
_STANDARD_TAPS = (2, 3, 4, 5)

# Inverted-residual stack: bottleneck 160 x W/16 x H/32 x D/32 at full width,
# tapped at the 2nd/3rd/4th bottleneck stages plus the 6th (deepest used).
_LIGHT_STAGES = (
    StageSpec(32, (2, 2, 2), "conv"),
    StageSpec(16, (1, 1, 1), "ir", repeats=1, expand=1),
    StageSpec(24, (2, 2, 2), "ir", repeats=2),
    StageSpec(32, (2, 2, 2), "ir", repeats=3),
    StageSpec(64, (2, 2, 2), "ir", repeats=4),
    StageSpec(96, (1, 1, 1), "ir", repeats=3),
    StageSpec(160, (1, 2, 2), "ir", repeats=3),
)
_LIGHT_TAPS = (2, 3, 4, 6)


def _cap_axial_stride(stages: tuple[StageSpec, ...], max_cum_z: int) -> tuple[StageSpec, ...]:
    """Drop trailing z-strides so the cumulative axial divisor stays <= max_cum_z."""
    out = []
    cum_z = 1
    for spec in stages:
        sx, sy, sz = spec.stride
        if sz == 2 and cum_z * 2 > max_cum_z:
            spec = replace(spec, stride=(sx, sy, 1))
        cum_z *= spec.stride[2]
        out.append(spec)
    return tuple(out)


class ConvBlock(nn.Module):
    """Dense conv + batch norm + ReLU."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=(1, 1, 1), momentum=0.1):
        super().__init__()
        pad = kernel // 2
        self.conv = nn.Conv3d(in_ch, out_ch, kernel, stride=stride, padding=pad, bias=False)
        self.bn = nn.BatchNorm3d(out_ch, momentum=momentum)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class SepConvBlock(nn.Module):
    """Separable conv block: (k, k, 1) in-plane pass then (1, 1, k) axial pass."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=(1, 1, 1), momentum=0.1):
        super().__init__()
        sx, sy, sz = stride
        pad = kernel // 2
        self.spatial = nn.Conv3d(in_ch, out_ch, (kernel, kernel, 1), stride=(sx, sy, 1),
                                 padding=(pad, pad, 0), bias=False)
        self.bn1 = nn.BatchNorm3d(out_ch, momentum=momentum)
        self.axial = nn.Conv3d(out_ch, out_ch, (1, 1, kernel), stride=(1, 1, sz),
                               padding=(0, 0, pad), bias=False)
        self.bn2 = nn.BatchNorm3d(out_ch, momentum=momentum)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        x = self.act(self.bn1(self.spatial(x)))
        return self.act(self.bn2(self.axial(x)))


class InvertedResidual(nn.Module):
    """MobileNet-style 3D inverted residual: expand, depthwise, project."""

    def __init__(self, in_ch, out_ch, stride=(1, 1, 1), expand=6, momentum=0.1):
        super().__init__()
        hidden = in_ch * expand
        self.use_residual = stride == (1, 1, 1) and in_ch == out_ch
        layers = []
        if expand != 1:
            layers += [nn.Conv3d(in_ch, hidden, 1, bias=False),
                       nn.BatchNorm3d(hidden, momentum=momentum),
                       nn.ReLU(inplace=True)]
        layers += [nn.Conv3d(hidden, hidden, 3, stride=stride, padding=1, groups=hidden,
                             bias=False),
                   nn.BatchNorm3d(hidden, momentum=momentum),
                   nn.ReLU(inplace=True),
                   nn.Conv3d(hidden, out_ch, 1, bias=False),
                   nn.BatchNorm3d(out_ch, momentum=momentum)]
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        out = self.block(x)
        return x + out if self.use_residual else out


def _make_stage(spec: StageSpec, in_ch: int, out_ch: int, momentum: float) -> nn.Module:
    blocks = []
    for i in range(spec.repeats):
        stride = spec.stride if i == 0 else (1, 1, 1)
        src = in_ch if i == 0 else out_ch
        if spec.kind == "sep":
            blocks.append(SepConvBlock(src, out_ch, stride=stride, momentum=momentum))
        elif spec.kind == "conv":
            blocks.append(ConvBlock(src, out_ch, kernel=3, stride=stride, momentum=momentum))
        elif spec.kind == "point":
            blocks.append(ConvBlock(src, out_ch, kernel=1, stride=stride, momentum=momentum))
        else:
            blocks.append(InvertedResidual(src, out_ch, stride=stride, expand=spec.expand,
                                           momentum=momentum))
    return nn.Sequential(*blocks) if len(blocks) > 1 else blocks[0]


class Encoder(nn.Module):
    """Stage stack emitting the tapped feature pyramid, shallow to deep."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        stages = []
        in_ch = cfg.in_channels
        for spec in cfg.stages:
            out_ch = cfg.scaled(spec.channels)
            stages.append(_make_stage(spec, in_ch, out_ch, cfg.bn_momentum))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)

    def check_extents(self, extents) -> None:
        deepest = self.cfg.cumulative_stride(len(self.cfg.stages) - 1)
        for ax, n, d in zip("xyz", extents, deepest):
            if n % d != 0:
                raise ShapeError(
                    f"axis {ax}: input extent {n} is not divisible by the cumulative "
                    f"stride {d}")

    def forward(self, x):
        self.check_extents(x.shape[2:])
        taps = set(self.cfg.tap_stages)
        pyramid = []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i in taps:
                pyramid.append(x)
        return pyramid


def upsample_factors(cum_stride) -> list[tuple[int, int, int]]:
    """Per-block trilinear upsampling factors recovering ``cum_stride`` overall.

    The block count is the number of axis doublings needed along the most
    downsampled axis; axes that finish early upsample by 1 in later blocks.
    """
    remaining = list(cum_stride)
    n_blocks = max(int(math.log2(s)) for s in remaining)
    factors = []
    for _ in range(n_blocks):
        step = tuple(2 if r > 1 else 1 for r in remaining)
        remaining = [r // f for r, f in zip(remaining, step)]
        factors.append(step)
    return factors


class UpsampleBlock(nn.Module):
    """Conv block, separable conv block(s), then trilinear upsampling."""

    def __init__(self, in_ch, out_ch, factors, sep_repeats=1, momentum=0.1):
        super().__init__()
        self.conv = ConvBlock(in_ch, out_ch, kernel=3, momentum=momentum)
        self.sep = nn.Sequential(
            *[SepConvBlock(out_ch, out_ch, momentum=momentum) for _ in range(sep_repeats)])
        self.factors = tuple(float(f) for f in factors)

    def forward(self, x):
        x = self.sep(self.conv(x))
        if any(f != 1.0 for f in self.factors):
            x = F.interpolate(x, scale_factor=self.factors, mode="trilinear",
                              align_corners=False)
        return x


class Decoder(nn.Module):
    """Cascade of upsampling blocks from one pyramid level to full resolution."""

    def __init__(self, in_ch: int, cum_stride, num_classes: int, widths, sep_repeats=1,
                 momentum=0.1):
        super().__init__()
        self.cum_stride = tuple(cum_stride)
        factors = upsample_factors(cum_stride)
        blocks = []
        ch = in_ch
        for i, f in enumerate(factors):
            out_ch = widths[min(i, len(widths) - 1)]
            blocks.append(UpsampleBlock(ch, out_ch, f, sep_repeats, momentum))
            ch = out_ch
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv3d(ch, num_classes, 1)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def forward(self, x):
        return self.head(self.blocks(x))


@dataclass
class SegmentationOutput:
    """Final logits plus the per-decoder intermediate logits, all 2 x W x H x D."""

    final_logits: torch.Tensor
    intermediate_logits: tuple[torch.Tensor, ...] = field(default=())

    @property
    def all_logits(self) -> tuple[torch.Tensor, ...]:
        return tuple(self.intermediate_logits) + (self.final_logits,)


class HierSegNet(nn.Module):
    """Encoder + parallel decoders + pointwise fusion (hierarchical variants)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        widths = tuple(max(8, int(round(w * cfg.width_multiplier))) for w in cfg.decoder_widths)
        self.decoders = nn.ModuleList([
            Decoder(cfg.scaled(cfg.stages[t].channels), cfg.cumulative_stride(t),
                    cfg.num_classes, widths, cfg.sep_per_block, cfg.bn_momentum)
            for t in cfg.tap_stages
        ])
        if cfg.is_baseline:
            self.fusion = None
        else:
            self.fusion = nn.Conv3d(cfg.num_classes * 4, cfg.num_classes, 1)

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.encoder(x)

    def decode_level(self, level: int, feature: torch.Tensor,
                     input_extents=None) -> torch.Tensor:
        """Run one decoder; optionally validate extents against its tap stride."""
        decoder = self.decoders[level]
        if input_extents is not None:
            expected = tuple(n // s for n, s in zip(input_extents, decoder.cum_stride))
            if tuple(feature.shape[2:]) != expected:
                raise ShapeError(
                    f"decoder {level}: feature extents {tuple(feature.shape[2:])} do not "
                    f"match input extents {tuple(input_extents)} under cumulative stride "
                    f"{decoder.cum_stride}")
        return decoder(feature)

    def fuse(self, intermediates) -> torch.Tensor:
        """Concatenate four 2-channel maps and mix voxel-wise to the final logits."""
        if self.fusion is None:
            raise RuntimeError("baseline variants have no fusion layer")
        intermediates = tuple(intermediates)
        if len(intermediates) != 4:
            raise ShapeError(f"fusion expects 4 intermediate maps, got {len(intermediates)}")
        shapes = {tuple(t.shape) for t in intermediates}
        if len(shapes) != 1:
            raise ShapeError(f"intermediate maps disagree in shape: {sorted(shapes)}")
        return self.fusion(torch.cat(intermediates, dim=1))

    def forward(self, x: torch.Tensor) -> SegmentationOutput:
        if x.ndim != 5:
            raise ShapeError(f"expected (batch, channel, x, y, z) input, got {tuple(x.shape)}")
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected {self.cfg.in_channels} input channel(s), "
                             f"got {x.shape[1]}")
        pyramid = self.encode(x)
        extents = x.shape[2:]
        intermediates = tuple(
            self.decode_level(i, feat, extents) for i, feat in enumerate(pyramid))
        if self.cfg.is_baseline:
            return SegmentationOutput(final_logits=intermediates[0],
                                      intermediate_logits=intermediates)
        final = self.fuse(intermediates)
        return SegmentationOutput(final_logits=final, intermediate_logits=intermediates)


def build_model(cfg: ModelConfig, rng_seed: int = 0) -> HierSegNet:
    """Construct a network with seed-deterministic parameter initialization."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(rng_seed)
        model = HierSegNet(cfg)
    return model


def config_to_dict(cfg: ModelConfig) -> dict:
    """Plain-dict form of a config, for checkpoint echo."""
    return {
        "variant": cfg.variant,
        "stages": [
            {"channels": s.channels, "stride": list(s.stride), "kind": s.kind,
             "repeats": s.repeats, "expand": s.expand}
            for s in cfg.stages
        ],
        "tap_stages": list(cfg.tap_stages),
        "in_channels": cfg.in_channels,
        "num_classes": cfg.num_classes,
        "width_multiplier": cfg.width_multiplier,
        "decoder_widths": list(cfg.decoder_widths),
        "sep_per_block": cfg.sep_per_block,
        "bn_momentum": cfg.bn_momentum,
    }


def config_from_dict(data: dict) -> ModelConfig:
    stages = tuple(
        StageSpec(channels=s["channels"], stride=tuple(s["stride"]), kind=s["kind"],
                  repeats=s["repeats"], expand=s["expand"])
        for s in data["stages"]
    )
    return ModelConfig(
        variant=data["variant"],
        stages=stages,
        tap_stages=tuple(data["tap_stages"]),
        in_channels=data["in_channels"],
        num_classes=data["num_classes"],
        width_multiplier=data["width_multiplier"],
        decoder_widths=tuple(data["decoder_widths"]),
        sep_per_block=data["sep_per_block"],
        bn_momentum=data["bn_momentum"],
    )


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
