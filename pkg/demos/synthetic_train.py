"""End-to-end run on a synthetic corpus: generate, train briefly, detect, score.

Uses a small model so it finishes in a few minutes on CPU.
Run: python demos/synthetic_train.py [workdir]
"""
import sys
import tempfile
from pathlib import Path

from frbdet.config import RunConfig
from frbdet.data import generate_synthetic_dataset, load_sample, read_manifest
from frbdet.evaluation import evaluate
from frbdet.inference import detect_array
from frbdet.model import ModelConfig
from frbdet.train import train

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="frbdet-demo-"))
generate_synthetic_dataset(20, 128, 7, work / "corpus")
cfg = RunConfig(
    model=ModelConfig(encoder_ladder=(16, 32, 64), frb_channels=32),
    manifest=str(work / "corpus" / "manifest.tsv"), image_size=128, iterations=300,
    out_dir=str(work / "run"), log_every=50,
)
size = (cfg.image_size, cfg.image_size)
records = read_manifest(cfg.manifest, size)
result = train(cfg, records)
print(f"loss {result.losses[0]:.3f} -> {result.losses[-1]:.3f}")

dets, gts = {}, {}
for i, rec in enumerate(records):
    image, polys = load_sample(rec, size)
    dets[str(i)] = detect_array(result.model, image, cfg.geometry, cfg.score_thresh, cfg.merge_iou, cfg.nms_iou)
    gts[str(i)] = polys
report = evaluate(dets, gts)
print(f"workdir {work}")
print(report.summary())
