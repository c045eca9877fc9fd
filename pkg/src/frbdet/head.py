"""Detection head (score, RBOX, QUAD) and its training losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class LossWeights:
    geometry: float = 0.2  # lambda_g
    angle: float = 10.0  # lambda_theta
    score_loss: str = "dice"  # or "bce"

    def __post_init__(self):
        if self.geometry <= 0 or self.angle <= 0:
            raise ValueError("loss weights must be positive")
        if self.score_loss not in ("dice", "bce"):
            raise ValueError(f"unknown score loss {self.score_loss!r}")


class DetectionHead(nn.Module):
    """Four 1x1 convolutions emitting 1, 4, 1 and 8 channels.

    Distances pass through ``max_distance * sigmoid``, the angle through
    ``tanh * pi/4``; QUAD offsets are linear, scaled by ``quad_scale`` pixels.
    """

    def __init__(self, in_channels, max_distance=128.0, quad_scale=32.0):
        super().__init__()
        self.score = nn.Conv2d(in_channels, 1, 1)
        self.distances = nn.Conv2d(in_channels, 4, 1)
        self.angle = nn.Conv2d(in_channels, 1, 1)
        self.quad = nn.Conv2d(in_channels, 8, 1)
        self.max_distance = float(max_distance)
        self.quad_scale = float(quad_scale)

    def forward(self, f):
        return {
            "score": torch.sigmoid(self.score(f)),
            "distances": self.max_distance * torch.sigmoid(self.distances(f)),
            "angle": torch.tanh(self.angle(f)) * (math.pi / 4),
            "quad": self.quad_scale * self.quad(f),
        }


def head_forward(f, head: DetectionHead):
    out = head(f)
    return out["score"], (out["distances"], out["angle"]), out["quad"]


def score_loss(pred, gt, mask=None):
    """Dice loss ``1 - 2 sum(p g) / (sum p + sum g)`` over masked pixels (0 if empty)."""
    if mask is None:
        mask = torch.ones_like(gt)
    inter = (pred * gt * mask).sum()
    denom = (pred * mask).sum() + (gt * mask).sum()
    if float(denom.detach()) == 0.0:
        return denom * 0.0
    return 1.0 - 2.0 * inter / denom


def balanced_bce_loss(pred, gt, mask=None):
    """Class-balanced cross-entropy as used by EAST-style heads."""
    if mask is None:
        mask = torch.ones_like(gt)
    n = mask.sum()
    if float(n) == 0.0:
        return n * 0.0
    beta = 1.0 - (gt * mask).sum() / n
    p = pred.clamp(1e-7, 1 - 1e-7)
    loss = -(beta * gt * torch.log(p) + (1 - beta) * (1 - gt) * torch.log(1 - p))
    return (loss * mask).sum() / n


def aabb_iou(pred_d, gt_d):
    """IoU of two boxes sharing an anchor point, given (top, right, bottom, left) distances.

    Distances lie on dim -3 of ``[..., 4, H, W]`` tensors.
    """
    pt, pr, pb, pl = pred_d.unbind(-3)
    gt, gr, gb, gl = gt_d.unbind(-3)
    area_p = (pt + pb) * (pr + pl)
    area_g = (gt + gb) * (gr + gl)
    w = torch.minimum(pr, gr) + torch.minimum(pl, gl)
    h = torch.minimum(pt, gt) + torch.minimum(pb, gb)
    inter = w * h
    return inter / (area_p + area_g - inter)


def rbox_loss(pred_d, pred_angle, gt_d, gt_angle, positive_mask, angle_weight=10.0):
    """Mean over positive pixels of ``-log IoU + angle_weight * (1 - cos(dtheta))``."""
    n = positive_mask.sum()
    if float(n) == 0.0:
        return n * 0.0
    iou = aabb_iou(pred_d, gt_d).clamp_min(1e-12)
    per_pixel = -torch.log(iou) + angle_weight * (1.0 - torch.cos(pred_angle - gt_angle).squeeze(-3))
    return (per_pixel * positive_mask.squeeze(-3)).sum() / n


def smooth_l1(x):
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def quad_loss(pred, gt, positive_mask, short_edge):
    """Smooth-L1 of the 8 offsets scaled by the ground-truth short edge, summed over
    coordinates and averaged over positive pixels."""
    mask = positive_mask.squeeze(-3)
    n = mask.sum()
    if float(n) == 0.0:
        return n * 0.0
    norm = short_edge.squeeze(-3).clamp_min(1.0).unsqueeze(-3)
    per_pixel = smooth_l1((pred - gt) / norm).sum(-3)
    return (per_pixel * mask).sum() / n


def total_loss(l_s, l_rbox, l_quad, weights: LossWeights = LossWeights()):
    return l_s + weights.geometry * (l_rbox + l_quad)


def detection_loss(outputs, targets, weights: LossWeights = LossWeights()):
    """Full loss from head outputs and batched ``GroundTruthMaps`` targets.

    Returns ``(total, parts)`` with the score, RBOX and QUAD components.
    """
    mask = targets["mask"]
    positive = targets["score"] * mask
    if weights.score_loss == "dice":
        l_s = score_loss(outputs["score"], targets["score"], mask)
    else:
        l_s = balanced_bce_loss(outputs["score"], targets["score"], mask)
    l_r = rbox_loss(outputs["distances"], outputs["angle"], targets["distances"], targets["angle"],
                    positive, weights.angle)
    l_q = quad_loss(outputs["quad"], targets["quad"], positive, targets["short_edge"])
    return total_loss(l_s, l_r, l_q, weights), {"score": l_s, "rbox": l_r, "quad": l_q}
