"""ICDAR-style one-to-one IoU matching: precision, recall and F-score."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import intersection_area, polygon_iou, signed_area


@dataclass
class ImageResult:
    image_id: str
    matches: list  # (detection index, gt index, iou)
    detections: int  # counted detections (not discarded as don't-care)
    targets: int  # non-ignored ground truths


@dataclass
class EvalReport:
    per_image: list = field(default_factory=list)
    matched: int = 0
    detections: int = 0
    targets: int = 0

    @property
    def precision(self):
        return self.matched / self.detections if self.detections else 0.0

    @property
    def recall(self):
        return self.matched / self.targets if self.targets else 0.0

    @property
    def fscore(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    def summary(self):
        return (f"precision {self.precision:.4f}  recall {self.recall:.4f}  fscore {self.fscore:.4f}  "
                f"(matched {self.matched}, detections {self.detections}, targets {self.targets})")


def _poly_key(points):
    return tuple(np.round(np.asarray(points, dtype=np.float64).ravel(), 9))


def match_image(detections, gts, iou_threshold=0.5, method="greedy", dont_care_overlap=0.5):
    """Match one image.  Returns ``(matches, counted detection indices, target gt indices)``.

    Detections mostly inside an ignore region (intersection over detection
    area above ``dont_care_overlap``, or IoU at threshold) are discarded.
    Greedy matching walks detections by descending score and takes the
    best-IoU free target; ``method="optimal"`` maximises the match count.
    """
    targets = [i for i, g in enumerate(gts) if not g.ignore]
    ignored = [g for g in gts if g.ignore]
    counted = []
    for i, d in enumerate(detections):
        area = abs(signed_area(d.polygon))
        if any(polygon_iou(d.polygon, g.points) >= iou_threshold
               or (area > 0 and intersection_area(d.polygon, g.points) / area > dont_care_overlap)
               for g in ignored):
            continue
        counted.append(i)
    iou = np.array([[polygon_iou(detections[i].polygon, gts[j].points) for j in targets] for i in counted])
    iou = iou.reshape(len(counted), len(targets))
    matches = []
    if method == "greedy":
        order = sorted(range(len(counted)), key=lambda a: (-detections[counted[a]].score,
                                                          _poly_key(detections[counted[a]].polygon)))
        gt_rank = sorted(range(len(targets)), key=lambda b: _poly_key(gts[targets[b]].points))
        free = set(range(len(targets)))
        for a in order:
            best = None
            for b in gt_rank:
                if b in free and iou[a, b] >= iou_threshold and (best is None or iou[a, b] > iou[a, best]):
                    best = b
            if best is not None:
                free.discard(best)
                matches.append((counted[a], targets[best], float(iou[a, best])))
    elif method == "optimal":
        if iou.size:
            rows, cols = linear_sum_assignment(-(iou >= iou_threshold).astype(float))
            matches = [(counted[a], targets[b], float(iou[a, b]))
                       for a, b in zip(rows, cols) if iou[a, b] >= iou_threshold]
    else:
        raise ValueError(f"unknown matching method {method!r}")
    return matches, counted, targets


def evaluate(detections: dict, ground_truths: dict, iou_threshold=0.5, method="greedy") -> EvalReport:
    """Aggregate P/R/F over images keyed by id.  Images missing from
    ``detections`` count as having no detections."""
    extra = set(detections) - set(ground_truths)
    if extra:
        raise ValueError(f"detections for unknown images: {sorted(extra)[:5]}")
    report = EvalReport()
    for image_id in sorted(ground_truths):
        dets = detections.get(image_id, [])
        matches, counted, targets = match_image(dets, ground_truths[image_id], iou_threshold, method)
        report.per_image.append(ImageResult(image_id, matches, len(counted), len(targets)))
        report.matched += len(matches)
        report.detections += len(counted)
        report.targets += len(targets)
    return report
