"""Multi-scale feature refinement: channel attention, 4-direction IRNN, CRF-style aggregation.

Flat feature maps are ``[B, C, H, W]`` tensors.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

DIRECTIONS = ("up", "down", "left", "right")


def concat_orientations(g):
    """``[..., N, U, H, W] -> [..., N*U, H, W]``; channel ``k*U + u`` holds ``g[k, u]``."""
    return g.flatten(-4, -3)


def split_orientations(f, orientations):
    """Inverse of :func:`concat_orientations`."""
    return f.unflatten(-3, (f.shape[-3] // orientations, orientations))


def _conv1x1(f, weight, bias=None):
    if weight.dim() == 2:
        weight = weight[:, :, None, None]
    return F.conv2d(f, weight, bias)


def reduce_channels(f, weight, bias=None):
    """1x1 convolution from ``C_in`` to ``C_out <= C_in`` channels."""
    c_out, c_in = weight.shape[:2]
    if c_out > c_in:
        raise ValueError(f"reduce_channels cannot grow channels ({c_in} -> {c_out})")
    return _conv1x1(f, weight, bias)


def channel_attention(f, weight, bias=None):
    """``f * sigmoid(conv1x1(f))``."""
    return f * torch.sigmoid(_conv1x1(f, weight, bias))


def irnn_sweep(x, w_hh, direction, b_hh=None):
    """ReLU recurrence ``h_t = relu(W_hh h_{t-1} + x_t)`` swept across the map.

    ``right`` walks columns left to right, so the state at column ``x`` depends
    only on columns ``<= x``; ``left`` walks right to left; ``down`` walks rows
    top to bottom; ``up`` bottom to top.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"unknown direction {direction!r}")
    axis = -1 if direction in ("left", "right") else -2
    reverse = direction in ("left", "up")
    steps = x.unbind(axis)
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    h = torch.zeros_like(steps[0])  # [B, c, L]
    out = [None] * len(steps)
    for t in order:
        pre = torch.einsum("oc,bcl->bol", w_hh, h) + steps[t]
        if b_hh is not None:
            pre = pre + b_hh[None, :, None]
        h = torch.relu(pre)
        out[t] = h
    return torch.stack(out, dim=axis)


def irnn_forward(f, in_weight, w_hh, out_weight, in_bias=None, b_hh=None, out_bias=None):
    """Four-direction IRNN context features.

    The ``C`` input channels split into four groups, one per direction in
    :data:`DIRECTIONS`.  Each group goes through its own 1x1 input-to-hidden
    convolution (``in_weight[d]``) and directional sweep (``w_hh[d]``); the four
    hidden maps are concatenated and mixed by a 1x1 convolution plus ReLU.
    """
    C = f.shape[-3]
    if C % 4:
        raise ValueError(f"IRNN needs channels divisible by 4, got {C}")
    groups = f.split(C // 4, dim=-3)
    hidden = []
    for d, direction in enumerate(DIRECTIONS):
        x = _conv1x1(groups[d], in_weight[d], None if in_bias is None else in_bias[d])
        hidden.append(irnn_sweep(x, w_hh[d], direction, None if b_hh is None else b_hh[d]))
    return torch.relu(_conv1x1(torch.cat(hidden, dim=-3), out_weight, out_bias))


def compatibilities(logits):
    """Row-wise softmax over ``j != i``; the diagonal is zero."""
    M = logits.shape[0]
    eye = torch.eye(M, dtype=torch.bool, device=logits.device)
    return torch.softmax(logits.masked_fill(eye, float("-inf")), dim=1).masked_fill(eye, 0.0)


def crf_aggregate(features, message_weights, logits, proj_weight, proj_bias=None):
    """One mean-field round over ``M`` same-sized feature maps, then a 1x1 projection.

    ``refined_i = f_i + sum_{j != i} w_ij * conv1x1(f_j; message_weights[i, j])`` with
    ``w = compatibilities(logits)``; the output is ``proj(sum_i refined_i)``.
    """
    shape = features[0].shape
    if any(f.shape != shape for f in features):
        raise ValueError("all aggregated features must share one shape")
    M = len(features)
    total = sum(features)
    if M > 1:
        w = compatibilities(logits)
        for i in range(M):
            for j in range(M):
                if i != j:
                    total = total + w[i, j] * _conv1x1(features[j], message_weights[i, j])
    return _conv1x1(total, proj_weight, proj_bias)


class ChannelAttention(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 1)

    def forward(self, f):
        return channel_attention(f, self.conv.weight, self.conv.bias)


class FourDirIRNN(nn.Module):
    def __init__(self, channels):
        super().__init__()
        if channels % 4:
            raise ValueError(f"IRNN needs channels divisible by 4, got {channels}")
        c = channels // 4
        self.in_weight = nn.Parameter(torch.empty(4, c, c))
        self.in_bias = nn.Parameter(torch.zeros(4, c))
        self.w_hh = nn.Parameter(torch.eye(c).repeat(4, 1, 1))
        self.b_hh = nn.Parameter(torch.zeros(4, c))
        self.out = nn.Conv2d(channels, channels, 1)
        nn.init.normal_(self.in_weight, std=(1.0 / c) ** 0.5)

    def forward(self, f):
        return irnn_forward(f, self.in_weight, self.w_hh, self.out.weight,
                            self.in_bias, self.b_hh, self.out.bias)


class CRFAggregation(nn.Module):
    def __init__(self, nodes, channels, out_channels):
        super().__init__()
        self.message = nn.Parameter(torch.randn(nodes, nodes, channels, channels) * 0.1 / channels**0.5)
        self.logits = nn.Parameter(torch.zeros(nodes, nodes))
        self.proj = nn.Conv2d(channels, out_channels, 1)

    def forward(self, features):
        return crf_aggregate(features, self.message, self.logits, self.proj.weight, self.proj.bias)


class MultiScaleRefinement(nn.Module):
    """Reduce each FRB row, fuse at the finest scale, refine with attention, IRNN and CRF."""

    def __init__(self, channels, orientations, scales=3, reduced=None, out_channels=None):
        super().__init__()
        reduced = reduced or channels
        out_channels = out_channels or channels
        self.reduce = nn.ModuleList(nn.Conv2d(channels * orientations, reduced, 1) for _ in range(scales))
        self.conv3 = nn.Conv2d(reduced, reduced, 3, padding=1)
        self.attention = ChannelAttention(reduced)
        self.irnn = FourDirIRNN(reduced)
        self.crf = CRFAggregation(scales + 2, reduced, out_channels)
        self.out_channels = out_channels

    def forward(self, scale_features):
        flat = [red(concat_orientations(g)) for red, g in zip(self.reduce, scale_features)]
        size = flat[0].shape[-2:]
        flat = [f if f.shape[-2:] == size else
                F.interpolate(f, size=size, mode="bilinear", align_corners=False) for f in flat]
        fused = sum(flat)
        f_att = self.attention(torch.relu(self.conv3(fused)))
        f_irnn = self.irnn(fused)
        return torch.relu(self.crf(flat + [f_att, f_irnn]))
