"""End-to-end detection on images."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from .data import load_image
from .geometry import DetectionBox, decode_quad, decode_rbox, locality_aware_nms, write_detections


def predict_maps(model, image):
    """Run the network on one ``[3, H, W]`` array; returns numpy head maps."""
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(np.asarray(image)[None], dtype=next(model.parameters()).dtype)
        out = model(x)
    return {k: v[0].cpu().numpy().astype(np.float64) for k, v in out.items()}


def boxes_from_maps(maps, stride, geometry="rbox", score_thresh=0.8, merge_iou=0.2, nms_iou=0.2):
    if geometry == "rbox":
        raw = decode_rbox(maps["score"], maps["distances"], maps["angle"], score_thresh, stride)
    elif geometry == "quad":
        raw = decode_quad(maps["score"], maps["quad"], score_thresh, stride)
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    return locality_aware_nms(raw, merge_iou, nms_iou)


def detect_array(model, image, geometry="rbox", score_thresh=0.8, merge_iou=0.2, nms_iou=0.2):
    maps = predict_maps(model, image)
    return boxes_from_maps(maps, model.output_stride, geometry, score_thresh, merge_iou, nms_iou)


def annotate(image_path, boxes, out_path):
    img = Image.open(image_path).convert("RGB")
    draw = ImageDraw.Draw(img)
    for b in boxes:
        draw.polygon([tuple(p) for p in b.polygon], outline=(255, 0, 0))
    img.save(out_path)


def detect(image_path, model, cfg, out_dir=None, score_thresh=None, annotate_image=False):
    """Detect text in an image file, rescaling boxes to its original size.

    Writes ``res_<stem>.txt`` (and ``<stem>_annotated.png``) when ``out_dir`` is given.
    """
    size = (cfg.image_size, cfg.image_size)
    image, (sx, sy) = load_image(image_path, size)
    thresh = cfg.score_thresh if score_thresh is None else score_thresh
    boxes = detect_array(model, image, cfg.geometry, thresh, cfg.merge_iou, cfg.nms_iou)
    boxes = [DetectionBox(b.polygon / np.array([sx, sy]), b.score) for b in boxes]
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(image_path).stem
        write_detections(out_dir / f"res_{stem}.txt", boxes)
        if annotate_image:
            annotate(image_path, boxes, out_dir / f"{stem}_annotated.png")
    return boxes
