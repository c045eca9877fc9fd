"""Ground-truth encoding, geometry decoding, polygon IoU and locality-aware NMS.

Coordinates are image pixels with ``y`` pointing down.  Quadrilaterals are
``(4, 2)`` arrays ordered clockwise on screen starting from the top-left
vertex, which gives a positive shoelace area in these coordinates.  Map cell
``(i, j)`` at output stride ``s`` samples the image point
``((j + 0.5) s, (i + 0.5) s)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class TextPolygon:
    points: np.ndarray
    ignore: bool = False
    text: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(4, 2)


@dataclass
class DetectionBox:
    polygon: np.ndarray
    score: float

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64).reshape(4, 2)


@dataclass
class GroundTruthMaps:
    """Per-cell training targets for one image (all arrays are ``[C, h, w]``)."""

    score: np.ndarray
    distances: np.ndarray
    angle: np.ndarray
    quad: np.ndarray
    mask: np.ndarray
    short_edge: np.ndarray

    def as_dict(self):
        return {k: getattr(self, k) for k in ("score", "distances", "angle", "quad", "mask", "short_edge")}


# ----------------------------------------------------------------------------
# polygon primitives


def signed_area(poly):
    x, y = np.asarray(poly, dtype=np.float64).T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def order_quad(poly):
    """Clockwise (positive-area) vertex order starting at the top-left-most vertex."""
    poly = np.asarray(poly, dtype=np.float64).reshape(4, 2)
    if signed_area(poly) < 0:
        poly = poly[::-1]
    start = int(np.argmin(poly.sum(axis=1)))
    return np.roll(poly, -start, axis=0)


def edge_lengths(poly):
    return np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)


def points_in_polygon(points, poly):
    """Even-odd ray casting; ``points`` is ``(n, 2)``."""
    px, py = points[:, 0:1], points[:, 1:2]
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    crosses = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return np.logical_and(crosses, px < xint).sum(axis=1) % 2 == 1


def shrink_quad(poly, ratio=0.3):
    """Move every edge of a quad inward, EAST-style.

    Each vertex gets a reference length ``r_i`` (its shorter incident edge);
    an edge's endpoints slide towards each other by ``ratio * r``.  The longer
    pair of opposite edges is processed first.
    """
    poly = np.array(poly, dtype=np.float64)
    lengths = edge_lengths(poly)
    ref = np.minimum(lengths, np.roll(lengths, 1))  # vertex i touches edges i-1 and i
    first = (0, 2) if lengths[0] + lengths[2] > lengths[1] + lengths[3] else (1, 3)
    second = (1, 3) if first == (0, 2) else (0, 2)
    for pair in (first, second):
        for e in pair:
            a, b = e, (e + 1) % 4
            d = poly[b] - poly[a]
            n = np.linalg.norm(d)
            if n == 0:
                continue
            d /= n
            poly[a] += ratio * ref[a] * d
            poly[b] -= ratio * ref[b] * d
    return poly


def _convex_hull(points):
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and ((out[-1][0] - out[-2][0]) * (p[1] - out[-2][1])
                                     - (out[-1][1] - out[-2][1]) * (p[0] - out[-2][0])) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def normalize_angle(theta):
    """Reduce a rectangle orientation into ``(-pi/4, pi/4]``."""
    return math.pi / 4 - ((math.pi / 4 - theta) % (math.pi / 2))


def min_area_rect(points):
    """Minimum-area enclosing rectangle as ``(angle, (amin, amax, bmin, bmax))``.

    The rectangle is axis-aligned in the frame with axes ``e = (cos a, sin a)``
    and ``e_perp = (-sin a, cos a)``; ``a`` lies in ``(-pi/4, pi/4]``.
    """
    hull = _convex_hull(np.asarray(points, dtype=np.float64))
    best = None
    for i in range(len(hull)):
        d = hull[(i + 1) % len(hull)] - hull[i]
        if not d.any():
            continue
        theta = normalize_angle(math.atan2(d[1], d[0]))
        e = np.array([math.cos(theta), math.sin(theta)])
        ep = np.array([-math.sin(theta), math.cos(theta)])
        a, b = hull @ e, hull @ ep
        bounds = (a.min(), a.max(), b.min(), b.max())
        area = (bounds[1] - bounds[0]) * (bounds[3] - bounds[2])
        if best is None or area < best[0] - 1e-9:
            best = (area, theta, bounds)
    return best[1], best[2]


def rect_corners(theta, bounds):
    amin, amax, bmin, bmax = bounds
    e = np.array([math.cos(theta), math.sin(theta)])
    ep = np.array([-math.sin(theta), math.cos(theta)])
    return np.array([amin * e + bmin * ep, amax * e + bmin * ep, amax * e + bmax * ep, amin * e + bmax * ep])


def rbox_to_polygon(x, y, distances, theta):
    """Corners (TL, TR, BR, BL) of the rectangle around anchor ``(x, y)``."""
    top, right, bottom, left = distances
    c, s = math.cos(theta), math.sin(theta)
    e, ep = np.array([c, s]), np.array([-s, c])
    q = np.array([x, y], dtype=np.float64)
    return np.array([q - left * e - top * ep, q + right * e - top * ep,
                     q + right * e + bottom * ep, q - left * e + bottom * ep])


# ----------------------------------------------------------------------------
# IoU


def _clip(subject, a, b):
    out = []
    n = len(subject)
    ex, ey = b[0] - a[0], b[1] - a[1]

    def side(p):
        return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            t = sc / (sc - sn)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def intersection_area(a, b):
    """Area of the intersection of two convex polygons (Sutherland-Hodgman)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if signed_area(a) < 0:
        a = a[::-1]
    if signed_area(b) < 0:
        b = b[::-1]
    poly = [tuple(p) for p in a]
    for i in range(len(b)):
        if len(poly) < 3:
            return 0.0
        poly = _clip(poly, b[i], b[(i + 1) % len(b)])
    return max(signed_area(np.array(poly)), 0.0) if len(poly) >= 3 else 0.0


def polygon_iou(a, b):
    area_a, area_b = abs(signed_area(a)), abs(signed_area(b))
    if area_a <= 0 or area_b <= 0:
        return 0.0
    inter = intersection_area(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


# ----------------------------------------------------------------------------
# ground truth encoding


def cell_centers(map_shape, stride):
    h, w = map_shape
    ys, xs = np.mgrid[0:h, 0:w]
    return (xs + 0.5) * stride, (ys + 0.5) * stride


def encode_ground_truth(polygons, map_shape, stride, shrink_ratio=0.3) -> GroundTruthMaps:
    """Rasterise text polygons into score, RBOX, QUAD and training-mask maps."""
    h, w = map_shape
    score = np.zeros((1, h, w))
    dist = np.zeros((4, h, w))
    angle = np.zeros((1, h, w))
    quad = np.zeros((8, h, w))
    mask = np.ones((1, h, w))
    short = np.ones((1, h, w))
    cx, cy = cell_centers(map_shape, stride)
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
    for poly in polygons:
        pts = order_quad(poly.points)
        if abs(signed_area(pts)) < 1e-6:
            warnings.warn("skipping degenerate zero-area polygon", stacklevel=2)
            continue
        if poly.ignore:
            inside = points_in_polygon(centers, pts).reshape(h, w)
            mask[0][inside] = 0.0
            continue
        inside = points_in_polygon(centers, shrink_quad(pts, shrink_ratio)).reshape(h, w)
        if not inside.any():
            continue
        theta, (amin, amax, bmin, bmax) = min_area_rect(pts)
        q = np.stack([cx[inside], cy[inside]], axis=1)
        e = np.array([math.cos(theta), math.sin(theta)])
        ep = np.array([-math.sin(theta), math.cos(theta)])
        a, b = q @ e, q @ ep
        score[0][inside] = 1.0
        dist[:, inside] = np.stack([b - bmin, amax - a, bmax - b, a - amin])
        angle[0][inside] = theta
        quad[:, inside] = (np.repeat(pts[None], len(q), axis=0) - q[:, None, :]).reshape(len(q), 8).T
        short[0][inside] = edge_lengths(pts).min()
    return GroundTruthMaps(score, dist, angle, quad, mask, short)


# ----------------------------------------------------------------------------
# decoding and NMS


def _as_map(a):
    a = np.asarray(a, dtype=np.float64)
    return a[0] if a.ndim == 3 and a.shape[0] == 1 else a


def decode_rbox(score, distances, angle, score_threshold=0.8, stride=4, min_area=4.0):
    """One box per cell above threshold, in row-major order."""
    score, angle = _as_map(score), _as_map(angle)
    distances = np.asarray(distances, dtype=np.float64)
    cx, cy = cell_centers(score.shape, stride)
    boxes = []
    for i, j in zip(*np.nonzero(score > score_threshold)):
        poly = rbox_to_polygon(cx[i, j], cy[i, j], distances[:, i, j], angle[i, j])
        if abs(signed_area(poly)) >= min_area:
            boxes.append(DetectionBox(poly, float(score[i, j])))
    return boxes


def decode_quad(score, offsets, score_threshold=0.8, stride=4, min_area=4.0):
    score = _as_map(score)
    offsets = np.asarray(offsets, dtype=np.float64)
    cx, cy = cell_centers(score.shape, stride)
    boxes = []
    for i, j in zip(*np.nonzero(score > score_threshold)):
        poly = offsets[:, i, j].reshape(4, 2) + np.array([cx[i, j], cy[i, j]])
        if abs(signed_area(poly)) >= min_area:
            boxes.append(DetectionBox(poly, float(score[i, j])))
    return boxes


@dataclass
class _Group:
    polygon: np.ndarray
    score: float  # running sum
    peak: float  # max member score
    members: int = 1


def merge_pass(boxes, merge_iou=0.2):
    """Score-weighted merging of consecutive overlapping boxes.

    Returns ``(DetectionBox list with summed scores, peak member score per box)``.
    """
    groups: list[_Group] = []
    for box in boxes:
        if groups and polygon_iou(groups[-1].polygon, box.polygon) > merge_iou:
            g = groups[-1]
            total = g.score + box.score
            g.polygon = (g.score * g.polygon + box.score * box.polygon) / total
            g.score = total
            g.peak = max(g.peak, box.score)
            g.members += 1
        else:
            groups.append(_Group(box.polygon.copy(), box.score, box.score))
    return [DetectionBox(g.polygon, g.score) for g in groups], [g.peak for g in groups]


def standard_nms(boxes, iou_threshold=0.2):
    """Greedy NMS; returns indices of kept boxes in descending score order."""
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    keep = []
    for i in order:
        if all(polygon_iou(boxes[i].polygon, boxes[k].polygon) <= iou_threshold for k in keep):
            keep.append(i)
    return keep


def locality_aware_nms(boxes, merge_iou=0.2, final_iou=0.2):
    """Merge row-major neighbours, then greedy NMS.  Output scores are the peak
    member score, so they stay within (0, 1)."""
    merged, peaks = merge_pass(boxes, merge_iou)
    return [DetectionBox(merged[i].polygon, peaks[i]) for i in standard_nms(merged, final_iou)]


# ----------------------------------------------------------------------------
# file formats


def read_gt_file(path) -> list[TextPolygon]:
    """ICDAR 2015 style: ``x1,y1,...,x4,y4,transcription``; ``###`` marks ignore regions."""
    polys = []
    for line in Path(path).read_text(encoding="utf-8-sig").splitlines():
        line = line.strip()
        if not line:
            continue
        parts = line.split(",", 8)
        if len(parts) < 8:
            raise ValueError(f"{path}: malformed line {line!r}")
        text = parts[8] if len(parts) > 8 else ""
        polys.append(TextPolygon(np.array(parts[:8], dtype=np.float64), ignore=text.strip() == "###", text=text))
    return polys


def write_gt_file(path, polygons):
    lines = []
    for p in polygons:
        coords = ",".join(f"{v:g}" for v in p.points.ravel())
        lines.append(f"{coords},{'###' if p.ignore else p.text}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_detections(path, boxes):
    lines = [",".join(f"{v:.2f}" for v in b.polygon.ravel()) + f",{b.score:.6f}" for b in boxes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_detections(path) -> list[DetectionBox]:
    boxes = []
    for line in Path(path).read_text(encoding="utf-8-sig").splitlines():
        if line.strip():
            vals = [float(v) for v in line.split(",")]
            if len(vals) < 8:
                raise ValueError(f"{path}: malformed detection line {line!r}")
            boxes.append(DetectionBox(np.array(vals[:8]), vals[8] if len(vals) > 8 else 1.0))
    return boxes
