"""Gabor filter banks and Gabor-orientation-modulated (GOF) convolution.

Oriented feature maps are 5-D tensors ``[B, N, U, H, W]``: batch, convolution
channels, orientation channels, height and width.  A GOF layer keeps one
canonical ``[C_out, C_in, k, k]`` weight and multiplies it elementwise by a
fixed Gabor kernel per orientation, so each orientation channel is convolved
with its own modulated copy of the weight.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class GaborParams:
    orientations: int = 4
    scales: int = 4
    kernel_size: int = 3
    wavelength: float | None = None  # defaults to kernel_size
    aspect: float = 0.5
    bandwidth: float | None = None  # defaults to 0.56 * wavelength
    phase: float = 0.0
    scale_factor: float = math.sqrt(2.0)

    def __post_init__(self):
        if self.orientations < 1 or self.scales < 1:
            raise ValueError("orientations and scales must be >= 1")
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 3, got {self.kernel_size}")
        if self.wavelength is not None and self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def base_wavelength(self) -> float:
        return float(self.kernel_size if self.wavelength is None else self.wavelength)

    @property
    def base_bandwidth(self) -> float:
        return 0.56 * self.base_wavelength if self.bandwidth is None else float(self.bandwidth)


def gabor_kernel(size, theta, wavelength, sigma, aspect=0.5, phase=0.0):
    """Real Gabor kernel sampled on a ``size x size`` grid centred at the origin.

    Rows index ``y`` and columns index ``x``.  The kernel is not normalised.
    """
    half = (size - 1) / 2.0
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    envelope = np.exp(-(xr**2 + aspect**2 * yr**2) / (2.0 * sigma**2))
    return envelope * np.cos(2.0 * np.pi * xr / wavelength + phase)


def build_gabor_bank(params: GaborParams) -> np.ndarray:
    """Return the ``[V, U, k, k]`` bank of max-abs-normalised Gabor kernels.

    Orientation ``u`` (0-based) uses ``theta = u * pi / U``; scale ``v`` multiplies
    wavelength and bandwidth by ``scale_factor ** v``.
    """
    U, V, k = params.orientations, params.scales, params.kernel_size
    bank = np.empty((V, U, k, k))
    for v in range(V):
        lam = params.base_wavelength * params.scale_factor**v
        sigma = params.base_bandwidth * params.scale_factor**v
        for u in range(U):
            g = gabor_kernel(k, u * np.pi / U, lam, sigma, params.aspect, params.phase)
            bank[v, u] = g / np.abs(g).max()
    return bank


@functools.lru_cache(maxsize=64)
def _cached_bank(params: GaborParams) -> np.ndarray:
    bank = build_gabor_bank(params)
    bank.setflags(write=False)
    return bank


def shared_bank(params: GaborParams, kernel_size: int) -> np.ndarray:
    """Bank for ``params`` re-sized to ``kernel_size``, shared across layers."""
    return _cached_bank(replace(params, kernel_size=kernel_size))


def modulate_weights(canonical, bank, scale_index: int = 0):
    """Elementwise-modulate ``[C_out, C_in, k, k]`` weights with every orientation.

    Returns ``[C_out, U, C_in, k, k]`` where ``out[o, u] = canonical[o] * bank[v, u]``.
    Works for numpy arrays and torch tensors (gradients flow to ``canonical``).
    """
    bank = bank[scale_index]
    if canonical.shape[-2:] != tuple(bank.shape[-2:]):
        raise ValueError(f"kernel size mismatch: weights {tuple(canonical.shape[-2:])} "
                         f"vs bank {tuple(bank.shape[-2:])}")
    if isinstance(canonical, torch.Tensor):
        if not isinstance(bank, torch.Tensor):
            bank = torch.from_numpy(np.ascontiguousarray(bank))
        bank = bank.to(dtype=canonical.dtype, device=canonical.device)
    return canonical[:, None, :, :, :] * bank[None, :, None, :, :]


def gof_conv_forward(x, canonical, bank, scale_index=0, stride=1, padding=None, bias=None):
    """Orientation-wise convolution of an oriented map with modulated weights.

    ``x`` is ``[B, N_in, U, H, W]``; the result is ``[B, N_out, U, H', W']`` with
    ``out[:, o, u] = sum_c conv2d(x[:, c, u], canonical[o, c] * bank[v, u])``.
    """
    if x.dim() != 5:
        raise ValueError(f"expected [B, N, U, H, W] input, got shape {tuple(x.shape)}")
    B, n_in, U, H, W = x.shape
    n_out, c_in, k, _ = canonical.shape
    if c_in != n_in:
        raise ValueError(f"input has {n_in} channels, weights expect {c_in}")
    if bank.shape[1] != U:
        raise ValueError(f"input has {U} orientations, bank has {bank.shape[1]}")
    if padding is None:
        padding = k // 2
    w = modulate_weights(canonical, bank, scale_index)  # [O, U, C, k, k]
    w = w.transpose(0, 1).reshape(U * n_out, n_in, k, k)
    xg = x.transpose(1, 2).reshape(B, U * n_in, H, W)
    y = F.conv2d(xg, w, stride=stride, padding=padding, groups=U)
    y = y.reshape(B, U, n_out, y.shape[-2], y.shape[-1]).transpose(1, 2)
    if bias is not None:
        y = y + bias.view(1, -1, 1, 1, 1)
    return y


class GOFConv(nn.Module):
    """Learnable canonical weights modulated by a fixed Gabor bank."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1,
                 gabor: GaborParams | None = None, scale_index=0, bias=False):
        super().__init__()
        gabor = gabor or GaborParams()
        self.stride = stride
        self.scale_index = min(scale_index, gabor.scales - 1)
        bank = shared_bank(gabor, kernel_size)
        self.register_buffer("bank", torch.tensor(np.asarray(bank), dtype=torch.float32), persistent=False)
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        # He-uniform; orientations never mix, so fan-in is per orientation
        bound = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)
        nn.init.uniform_(self.weight, -bound * math.sqrt(6), bound * math.sqrt(6))

    @property
    def orientations(self):
        return self.bank.shape[1]

    def forward(self, x):
        return gof_conv_forward(x, self.weight, self.bank, self.scale_index,
                                stride=self.stride, bias=self.bias)
