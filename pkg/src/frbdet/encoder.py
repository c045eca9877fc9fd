"""Gabor-modulated reduced ResNet-18 encoder."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .gabor import GaborParams, GOFConv


def expand_orientation_channels(image, orientations):
    """Replicate an image into ``orientations`` identical orientation channels.

    ``[3, H, W] -> [3, U, H, W]`` or, batched, ``[B, 3, H, W] -> [B, 3, U, H, W]``.
    """
    if orientations < 1:
        raise ValueError("orientations must be >= 1")
    return image.unsqueeze(-3).expand(*image.shape[:-2], orientations, *image.shape[-2:]).contiguous()


class GOFUnit(nn.Module):
    """GOF convolution, optional batch norm over convolution channels, optional ReLU."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, gabor=None,
                 scale_index=0, batch_norm=True, relu=True):
        super().__init__()
        self.conv = GOFConv(in_channels, out_channels, kernel_size, stride, gabor, scale_index,
                            bias=not batch_norm)
        # BatchNorm3d treats [B, N, U, H, W] as N channels over (U, H, W)
        self.bn = nn.BatchNorm3d(out_channels) if batch_norm else None
        self.relu = relu

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        return torch.relu(x) if self.relu else x


class BasicBlock(nn.Module):
    def __init__(self, in_channels, out_channels, stride=1, gabor=None, scale_index=0, batch_norm=True):
        super().__init__()
        self.conv1 = GOFUnit(in_channels, out_channels, 3, stride, gabor, scale_index, batch_norm)
        self.conv2 = GOFUnit(out_channels, out_channels, 3, 1, gabor, scale_index, batch_norm, relu=False)
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = GOFUnit(in_channels, out_channels, 3, stride, gabor, scale_index,
                                    batch_norm, relu=False)

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        return torch.relu(self.conv2(self.conv1(x)) + identity)


@dataclass
class EncoderOutput:
    conv3_2: torch.Tensor
    skips: list  # oriented maps at strides 4 and 8


class GaborResNetEncoder(nn.Module):
    """Stem (stride 2), conv2_x (stride 4) and conv3_x (stride 8) of a narrow ResNet-18.

    ``ladder`` gives the widths of stem, conv2_x and conv3_x.  Every convolution,
    the stem included, is Gabor-modulated.
    """

    min_size = 32

    def __init__(self, ladder=(16, 32, 64), gabor: GaborParams | None = None, batch_norm=True):
        super().__init__()
        gabor = gabor or GaborParams()
        self.orientations = gabor.orientations
        c0, c1, c2 = ladder
        self.stem = GOFUnit(3, c0, 3, 2, gabor, 0, batch_norm)
        self.conv2 = nn.Sequential(BasicBlock(c0, c1, 2, gabor, 0, batch_norm),
                                   BasicBlock(c1, c1, 1, gabor, 0, batch_norm))
        self.conv3 = nn.Sequential(BasicBlock(c1, c2, 2, gabor, 1, batch_norm),
                                   BasicBlock(c2, c2, 1, gabor, 1, batch_norm))
        self.out_channels = c2
        self.skip_channels = (c1, c2)

    def forward(self, image) -> EncoderOutput:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        H, W = image.shape[-2:]
        if H < self.min_size or W < self.min_size:
            raise ValueError(f"image must be at least 32x32, got {H}x{W}")
        if H % 32 or W % 32:
            raise ValueError(f"image dims must be multiples of 32, got {H}x{W}")
        x = expand_orientation_channels(image, self.orientations)
        s4 = self.conv2(self.stem(x))
        s8 = self.conv3(s4)
        return EncoderOutput(conv3_2=s8, skips=[s4, s8])


def encode(image, encoder: GaborResNetEncoder) -> EncoderOutput:
    return encoder(image)
