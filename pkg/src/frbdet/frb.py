"""Feature Representation Block: rows of Gabor convolutions at decreasing resolution."""
from __future__ import annotations

from dataclasses import dataclass

import torch.nn.functional as F
from torch import nn

from .encoder import GOFUnit
from .gabor import GaborParams


@dataclass
class FrbConfig:
    channels: int = 32
    kernel_sizes: tuple = (7, 5, 3)
    kernels_per_row: tuple = (2, 2, 2)
    downsample_factor: int = 2
    downsample: str = "conv"  # "conv" (strided GOF conv) or "avg"
    batch_norm: bool = True
    scale_index: int = 2

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.kernels_per_row = tuple(self.kernels_per_row)
        if self.rows < 2:
            raise ValueError("FRB needs at least two rows")
        if len(self.kernels_per_row) != self.rows:
            raise ValueError("kernels_per_row must have one entry per row")
        if any(k % 2 == 0 for k in self.kernel_sizes):
            raise ValueError("kernel sizes must be odd")
        if any(n < 1 for n in self.kernels_per_row):
            raise ValueError("each row needs at least one Gabor layer")
        if self.downsample_factor < 2:
            raise ValueError("downsample_factor must be >= 2")
        if self.downsample not in ("conv", "avg"):
            raise ValueError(f"unknown downsample mode {self.downsample!r}")

    @property
    def rows(self):
        return len(self.kernel_sizes)

    def receptive_fields(self):
        """Receptive field (in input-map pixels) of each row's output."""
        rf, jump, out = 1, 1, []
        for r, (k, n) in enumerate(zip(self.kernel_sizes, self.kernels_per_row)):
            if r > 0:
                dk = 3 if self.downsample == "conv" else self.downsample_factor
                rf += (dk - 1) * jump
                jump *= self.downsample_factor
            rf += n * (k - 1) * jump
            out.append(rf)
        return out


class FeatureRepresentationBlock(nn.Module):
    def __init__(self, in_channels, cfg: FrbConfig | None = None, gabor: GaborParams | None = None):
        super().__init__()
        cfg = cfg or FrbConfig()
        self.cfg = cfg
        N = cfg.channels
        self.downsamplers = nn.ModuleList()
        self.rows = nn.ModuleList()
        for r, (k, n) in enumerate(zip(cfg.kernel_sizes, cfg.kernels_per_row)):
            cin = in_channels if r == 0 else N
            if r > 0 and cfg.downsample == "conv":
                self.downsamplers.append(GOFUnit(cin, cin, 3, cfg.downsample_factor, gabor,
                                                 cfg.scale_index, cfg.batch_norm))
            layers = [GOFUnit(cin if i == 0 else N, N, k, 1, gabor, cfg.scale_index, cfg.batch_norm)
                      for i in range(n)]
            self.rows.append(nn.Sequential(*layers))

    def _downsample(self, x, r):
        if self.cfg.downsample == "conv":
            return self.downsamplers[r - 1](x)
        f = self.cfg.downsample_factor
        return F.avg_pool3d(x, kernel_size=(1, f, f))

    def forward(self, x):
        H, W = x.shape[-2:]
        shrink = self.cfg.downsample_factor ** (self.cfg.rows - 1)
        if H < shrink or W < shrink:
            raise ValueError(f"{H}x{W} map too small to downsample {self.cfg.rows - 1} times")
        outs = []
        for r, row in enumerate(self.rows):
            if r > 0:
                x = self._downsample(x, r)
            x = row(x)
            outs.append(x)
        return outs


def frb_forward(f, block: FeatureRepresentationBlock):
    return block(f)
