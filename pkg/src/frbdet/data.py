"""Curriculum data pipeline: pixel-wise blur, Mask-and-Predict occlusion,
difficulty ranking and a synthetic pseudo-text corpus.

Images are float arrays ``[3, H, W]`` with values in ``[0, 1]``.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .geometry import TextPolygon, edge_lengths, encode_ground_truth, polygon_iou, read_gt_file, write_gt_file


def _gaussian3(sigma=1.0):
    t = np.exp(-np.arange(-1, 2) ** 2 / (2 * sigma**2))
    k = np.outer(t, t)
    return k / k.sum()


@dataclass(frozen=True)
class Stage:
    start: int
    blur: float
    mask: float
    cutoff: float


@dataclass
class CurriculumSchedule:
    stages: list

    def __post_init__(self):
        self.stages = [s if isinstance(s, Stage) else Stage(*s) for s in self.stages]
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        if self.stages[0].start != 0:
            raise ValueError("first stage must start at iteration 0")
        for a, b in zip(self.stages, self.stages[1:]):
            if b.start <= a.start:
                raise ValueError("stage starts must strictly increase")
            if b.blur < a.blur or b.mask < a.mask or b.cutoff < a.cutoff:
                raise ValueError("blur, mask and difficulty cutoff must be non-decreasing")
        for s in self.stages:
            if not all(0.0 <= v <= 1.0 for v in (s.blur, s.mask, s.cutoff)):
                raise ValueError(f"stage fractions must lie in [0, 1]: {s}")

    def stage_at(self, iteration) -> Stage:
        current = self.stages[0]
        for s in self.stages:
            if s.start <= iteration:
                current = s
        return current

    @classmethod
    def default(cls, total_iterations):
        third = max(total_iterations // 3, 1)
        return cls([Stage(0, 0.0, 0.0, 0.5), Stage(third, 0.10, 0.10, 0.75), Stage(2 * third, 0.25, 0.20, 1.0)])

    @classmethod
    def parse(cls, text):
        """``start:blur:mask:cutoff`` stages separated by ``;``."""
        return cls([Stage(int(a), float(b), float(c), float(d))
                    for a, b, c, d in (chunk.split(":") for chunk in text.split(";") if chunk.strip())])

    def format(self):
        return ";".join(f"{s.start}:{s.blur:g}:{s.mask:g}:{s.cutoff:g}" for s in self.stages)


@dataclass
class SampleRecord:
    image_path: str
    gt_path: str
    difficulty: float = 0.0


# ----------------------------------------------------------------------------
# augmentations


def apply_pixel_blur(image, fraction, seed):
    """Replace ``floor(fraction * H * W)`` seeded pixel sites by their 3x3 Gaussian average."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    image = np.asarray(image)
    _, H, W = image.shape
    n = int(math.floor(fraction * H * W))
    if n == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    sites = rng.choice(H * W, size=n, replace=False)
    kernel = _gaussian3(1.0)
    blurred = np.stack([ndimage.convolve(c, kernel, mode="nearest") for c in image])
    out = image.copy().reshape(3, -1)
    out[:, sites] = blurred.reshape(3, -1)[:, sites]
    return out.reshape(image.shape)


def apply_mask(image, polygons, fraction, seed):
    """Occlude a seeded sub-rectangle covering ``fraction`` of each text box's
    bounding box with the image mean colour.  Ground truth is left untouched."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    image = np.asarray(image)
    out = image.copy()
    if fraction == 0.0 or not polygons:
        return out
    _, H, W = image.shape
    mean = image.reshape(3, -1).mean(axis=1)
    rng = np.random.default_rng(seed)
    scale = math.sqrt(fraction)
    for poly in polygons:
        if poly.ignore:
            continue
        x0, y0 = np.floor(poly.points.min(axis=0)).astype(int)
        x1, y1 = np.ceil(poly.points.max(axis=0)).astype(int)
        x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, W), min(y1, H)
        bw, bh = x1 - x0, y1 - y0
        mw, mh = int(round(bw * scale)), int(round(bh * scale))
        if mw <= 0 or mh <= 0:
            continue
        ox = x0 + int(rng.integers(0, bw - mw + 1))
        oy = y0 + int(rng.integers(0, bh - mh + 1))
        out[:, oy:oy + mh, ox:ox + mw] = mean[:, None, None]
    return out


# ----------------------------------------------------------------------------
# difficulty


def laplacian_variance(image):
    gray = np.asarray(image).mean(axis=0)
    return float(ndimage.laplace(gray, mode="nearest").var())


def difficulty_factors(polygons, image, small_edge=12.0, count_scale=5.0, sharpness_ref=0.01):
    """``(count, small-box fraction, blurriness)``, each in ``[0, 1)``."""
    boxes = [p for p in polygons if not p.ignore]
    n = len(boxes)
    count = n / (n + count_scale)
    small = sum(edge_lengths(p.points).min() < small_edge for p in boxes) / n if n else 0.0
    blurriness = 1.0 / (1.0 + laplacian_variance(image) / sharpness_ref)
    return count, small, blurriness


def rank_difficulty(polygons, image, weights=(1 / 3, 1 / 3, 1 / 3)):
    """Weighted combination of :func:`difficulty_factors`; 0 is easiest."""
    return float(np.dot(weights, difficulty_factors(polygons, image)) / sum(weights))


# ----------------------------------------------------------------------------
# corpus IO


def load_image(path, size=None):
    """Load an RGB image as ``[3, H, W]`` floats; optionally resize to ``(H, W)``.

    Returns ``(image, (sx, sy))`` with the scale factors applied.
    """
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    sx = sy = 1.0
    if size is not None and (img.height, img.width) != tuple(size):
        sx, sy = size[1] / img.width, size[0] / img.height
        img = img.resize((size[1], size[0]), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0, (sx, sy)


def load_sample(record: SampleRecord, size=None):
    image, (sx, sy) = load_image(record.image_path, size)
    polys = read_gt_file(record.gt_path)
    for p in polys:
        p.points = p.points * np.array([sx, sy])
    return image, polys


def read_manifest(path, size=None):
    """One ``image_path<TAB>gt_path`` line per sample; relative paths resolve
    against the manifest's directory.  Difficulty is computed on load."""
    path = Path(path)
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        img, gt = line.split("\t")[:2]
        rec = SampleRecord(str(path.parent / img), str(path.parent / gt))
        image, polys = load_sample(rec, size)
        rec.difficulty = rank_difficulty(polys, image)
        records.append(rec)
    return records


def write_manifest(path, records):
    path = Path(path)
    lines = []
    for r in records:
        img, gt = Path(r.image_path), Path(r.gt_path)
        try:
            img, gt = img.relative_to(path.parent), gt.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{img}\t{gt}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ----------------------------------------------------------------------------
# synthetic corpus


def _rect(cx, cy, w, h, theta):
    c, s = math.cos(theta), math.sin(theta)
    e, ep = np.array([c, s]), np.array([-s, c])
    ctr = np.array([cx, cy])
    return np.array([ctr - w / 2 * e - h / 2 * ep, ctr + w / 2 * e - h / 2 * ep,
                     ctr + w / 2 * e + h / 2 * ep, ctr - w / 2 * e + h / 2 * ep])


def render_synthetic(size, rng, max_boxes=3, width_range=(36, 80), height_range=(14, 24), max_angle=30.0):
    """One textured background with non-overlapping rotated pseudo-text boxes.

    Returns ``(uint8 image [H, W, 3], list of TextPolygon)``.
    """
    H = W = size
    coarse = rng.uniform(0.0, 1.0, size=(3, 6, 6))
    bg = np.stack([ndimage.zoom(c, H / 6, order=1)[:H, :W] for c in coarse])
    bg = 0.35 + 0.3 * bg + rng.normal(0.0, 0.04, size=(3, H, W))
    img = Image.fromarray((np.clip(bg, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)
    polys, padded_rects = [], []
    n = int(rng.integers(1, max_boxes + 1))
    for _ in range(60):
        if len(polys) == n:
            break
        w = rng.uniform(*width_range)
        h = rng.uniform(*height_range)
        theta = math.radians(rng.uniform(-max_angle, max_angle))
        cx, cy = rng.uniform(0, W), rng.uniform(0, H)
        pts = _rect(cx, cy, w, h, theta)
        if pts.min() < 2 or pts[:, 0].max() > W - 2 or pts[:, 1].max() > H - 2:
            continue
        padded = _rect(cx, cy, w + 8, h + 8, theta)
        if any(polygon_iou(padded, other) > 0 for other in padded_rects):
            continue
        dark = rng.uniform() < 0.5
        fg = rng.uniform(0.0, 0.15, 3) if dark else rng.uniform(0.85, 1.0, 3)
        ink = (1.0 - fg) if rng.uniform() < 0.7 else fg
        draw.polygon([tuple(p) for p in pts], fill=tuple(int(v * 255) for v in fg))
        # glyph-like strokes along the long axis
        glyphs = max(int(w // (0.6 * h)), 2)
        for g in range(glyphs):
            gx = -w / 2 + (g + 0.5) * w / glyphs
            off = np.array([math.cos(theta), math.sin(theta)]) * gx
            stroke = _rect(cx + off[0], cy + off[1], 0.35 * w / glyphs, 0.6 * h, theta)
            draw.polygon([tuple(p) for p in stroke], fill=tuple(int(v * 255) for v in ink))
        polys.append(TextPolygon(pts, text=f"text{len(polys)}"))
        padded_rects.append(padded)
    return np.asarray(img), polys


def generate_synthetic_dataset(count, image_size, seed, out_dir):
    """Write ``count`` synthetic images, ICDAR-style ground truth and a manifest.

    Deterministic per ``(count, image_size, seed)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        pixels, polys = render_synthetic(image_size, rng)
        img_path, gt_path = out_dir / f"img_{i:04d}.png", out_dir / f"gt_img_{i:04d}.txt"
        Image.fromarray(pixels).save(img_path)
        write_gt_file(gt_path, polys)
        image = pixels.astype(np.float64).transpose(2, 0, 1) / 255.0
        records.append(SampleRecord(str(img_path), str(gt_path), rank_difficulty(polys, image)))
    write_manifest(out_dir / "manifest.tsv", records)
    return records


# ----------------------------------------------------------------------------
# curriculum iteration


@dataclass
class CurriculumLoader:
    """Deterministic curriculum batches: batch ``t`` is a pure function of
    ``(samples, schedule, seed, t)``.

    With ``rank_normalize`` the difficulty cutoff applies to each sample's
    normalised rank within the corpus (0 easiest, 1 hardest) rather than to the
    raw score, so a cutoff of 0.5 admits the easier half.
    """

    samples: list
    schedule: CurriculumSchedule
    batch_size: int = 4
    image_size: tuple = (128, 128)
    stride: int = 4
    shrink_ratio: float = 0.3
    seed: int = 0
    enabled: bool = True
    rank_normalize: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def _load(self, idx):
        if idx not in self._cache:
            self._cache[idx] = load_sample(self.samples[idx], self.image_size)
        return self._cache[idx]

    def levels(self):
        raw = np.array([s.difficulty for s in self.samples], dtype=np.float64)
        if not self.rank_normalize:
            return raw
        if len(raw) == 1:
            return np.zeros(1)
        ranks = np.empty(len(raw))
        ranks[np.argsort(raw, kind="stable")] = np.arange(len(raw))
        return ranks / (len(raw) - 1)

    def eligible(self, stage: Stage):
        if not self.enabled:
            return list(range(len(self.samples)))
        levels = self.levels()
        idx = [i for i, level in enumerate(levels) if level <= stage.cutoff]
        if not idx:
            warnings.warn(f"no samples under difficulty cutoff {stage.cutoff}; using easiest decile",
                          stacklevel=2)
            order = sorted(range(len(self.samples)), key=lambda i: self.samples[i].difficulty)
            idx = sorted(order[:max(1, math.ceil(len(order) / 10))])
        return idx

    def batch(self, iteration):
        if not self.samples:
            raise ValueError("empty corpus")
        stage = self.schedule.stage_at(iteration) if self.enabled else Stage(0, 0.0, 0.0, 1.0)
        pool = self.eligible(stage)
        rng = np.random.default_rng([self.seed, iteration])
        pick = rng.choice(pool, size=self.batch_size, replace=len(pool) < self.batch_size)
        h, w = self.image_size
        maps_shape = (h // self.stride, w // self.stride)
        images, targets, polys = [], [], []
        for idx in pick:
            image, gt = self._load(int(idx))
            blur_seed, mask_seed = rng.integers(0, 2**32, size=2)
            image = apply_pixel_blur(image, stage.blur, int(blur_seed))
            image = apply_mask(image, gt, stage.mask, int(mask_seed))
            images.append(image)
            targets.append(encode_ground_truth(gt, maps_shape, self.stride, self.shrink_ratio).as_dict())
            polys.append(gt)
        return {
            "images": np.stack(images).astype(np.float32),
            "targets": {k: np.stack([t[k] for t in targets]).astype(np.float32) for k in targets[0]},
            "polygons": polys,
            "indices": [int(i) for i in pick],
            "stage": stage,
        }

    def batches(self, start, stop, prefetch=0):
        """Yield batches ``start..stop-1`` in order, optionally prepared ahead by a thread pool."""
        if prefetch <= 0:
            for t in range(start, stop):
                yield self.batch(t)
            return
        with ThreadPoolExecutor(max_workers=prefetch) as pool:
            yield from pool.map(self.batch, range(start, stop))


def curriculum_iter(schedule, samples, iteration, **kwargs):
    return CurriculumLoader(samples, schedule, **kwargs).batch(iteration)
