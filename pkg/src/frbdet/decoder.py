"""Transposed-convolution decoder with orientation-aware skip merges."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .mfrm import concat_orientations, reduce_channels


@dataclass
class DecoderConfig:
    ladder: tuple = (128, 64, 32, 16)
    # per-stage upsampling; merges follow the first two stages
    factors: tuple = (1, 2, 1, 1)

    def __post_init__(self):
        self.ladder = tuple(self.ladder)
        self.factors = tuple(self.factors)
        if any(b >= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ValueError(f"decoder ladder must strictly decrease, got {self.ladder}")
        if len(self.factors) != len(self.ladder):
            raise ValueError("need one upsample factor per ladder stage")
        if len(self.ladder) < 2:
            raise ValueError("decoder needs at least two stages (one per merge)")

    @property
    def upsampling(self):
        out = 1
        for f in self.factors:
            out *= f
        return out


def merge_point(current, skip, weight, bias=None):
    """``current + reduce(concat_orientations(skip))``."""
    flat = concat_orientations(skip)
    if flat.shape[-2:] != current.shape[-2:]:
        raise ValueError(f"skip {tuple(flat.shape[-2:])} does not match current {tuple(current.shape[-2:])}")
    return current + reduce_channels(flat, weight, bias)


class Deconv(nn.Module):
    """3x3 transposed convolution scaling both spatial dims by ``factor``, then ReLU."""

    def __init__(self, in_channels, out_channels, factor):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_channels, out_channels, 3, stride=factor, padding=1,
                                       output_padding=factor - 1)

    def forward(self, x):
        return torch.relu(self.conv(x))


class Decoder(nn.Module):
    def __init__(self, in_channels, skip_channels, orientations, cfg: DecoderConfig | None = None):
        super().__init__()
        cfg = cfg or DecoderConfig()
        self.cfg = cfg
        if len(skip_channels) != 2:
            raise ValueError("decoder merges exactly two skips")
        for c, target in zip(skip_channels, cfg.ladder):
            if c * orientations < target:
                raise ValueError(f"skip with {c}x{orientations} channels cannot be reduced to {target}")
        chans = (in_channels,) + cfg.ladder
        self.stages = nn.ModuleList(Deconv(a, b, f) for a, b, f in zip(chans, chans[1:], cfg.factors))
        # skips are consumed coarse-to-fine
        self.merges = nn.ModuleList(nn.Conv2d(c * orientations, cfg.ladder[i], 1)
                                    for i, c in enumerate(skip_channels))
        self.out_channels = cfg.ladder[-1]

    def forward(self, agg, skips, return_stages=False):
        """``skips`` are oriented maps ordered coarse-to-fine (one per merge)."""
        if len(skips) != len(self.merges):
            raise ValueError(f"expected {len(self.merges)} skips, got {len(skips)}")
        x, stages = agg, []
        for i, stage in enumerate(self.stages):
            x = stage(x)
            if i < len(self.merges):
                x = merge_point(x, skips[i], self.merges[i].weight, self.merges[i].bias)
            stages.append(x)
        return (x, stages) if return_stages else x


def decode_features(agg, skips, decoder: Decoder):
    return decoder(agg, skips)
