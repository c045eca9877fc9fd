"""``frbdet`` command line: train, detect, eval, synth, augment.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _image_id(path: Path, prefix):
    stem = path.stem
    return stem[len(prefix):] if stem.startswith(prefix) else stem


def cmd_train(args):
    from .config import dump_config, load_config
    from .train import train

    cfg = load_config(args.config)
    if not cfg.manifest or not Path(cfg.manifest).exists():
        raise FileNotFoundError(f"manifest not found: {cfg.manifest!r}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    result = train(cfg)
    print(f"final loss {result.losses[-1]:.4f}" if result.losses else "no iterations run")
    for ck in result.checkpoints:
        print(f"checkpoint {ck}")


def cmd_detect(args):
    from .checkpoint import load_checkpoint
    from .inference import detect

    model, cfg, _, _ = load_checkpoint(args.ckpt)
    boxes = detect(args.image, model, cfg, args.out_dir, args.score_thresh, args.annotate)
    for b in boxes:
        print(",".join(f"{v:.2f}" for v in b.polygon.ravel()) + f",{b.score:.4f}")


def cmd_eval(args):
    from .evaluation import evaluate
    from .geometry import read_detections, read_gt_file

    gts = {_image_id(p, "gt_"): read_gt_file(p) for p in sorted(Path(args.gt_dir).glob("*.txt"))}
    if not gts:
        raise FileNotFoundError(f"no ground-truth files in {args.gt_dir}")
    dets = {_image_id(p, "res_"): read_detections(p) for p in sorted(Path(args.det_dir).glob("*.txt"))}
    report = evaluate(dets, gts, args.iou, "optimal" if args.optimal else "greedy")
    print(report.summary())


def cmd_synth(args):
    from .data import generate_synthetic_dataset

    records = generate_synthetic_dataset(args.count, args.size, args.seed, args.out_dir)
    print(f"wrote {len(records)} samples and manifest.tsv to {args.out_dir}")


def cmd_augment(args):
    from PIL import Image, ImageDraw

    from .config import load_config
    from .data import CurriculumLoader, read_manifest

    cfg = load_config(args.config)
    records = read_manifest(cfg.manifest, (cfg.image_size, cfg.image_size))
    schedule = cfg.curriculum_schedule()
    loader = CurriculumLoader(records, schedule, cfg.batch_size, (cfg.image_size, cfg.image_size),
                              cfg.model.output_stride, cfg.shrink_ratio, cfg.seed, cfg.curriculum)
    out = Path(args.preview)
    out.mkdir(parents=True, exist_ok=True)
    for k, stage in enumerate(schedule.stages):
        batch = loader.batch(stage.start)
        for b, (image, polys) in enumerate(zip(batch["images"], batch["polygons"])):
            img = Image.fromarray((np.clip(image, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8))
            draw = ImageDraw.Draw(img)
            for p in polys:
                draw.polygon([tuple(v) for v in p.points], outline=(0, 255, 0))
            img.save(out / f"stage{k}_iter{stage.start}_{b}.png")
        print(f"stage {k}: start {stage.start} blur {stage.blur:g} mask {stage.mask:g} cutoff {stage.cutoff:g}")


def build_parser():
    parser = _Parser(prog="frbdet", description="Scene-text detection with Gabor orientation filters.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a detector from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="detect text in one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--score-thresh", type=float)
    p.add_argument("--annotate", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="ICDAR-style precision/recall/F-score")
    p.add_argument("--det-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--optimal", action="store_true", help="maximum-cardinality matching instead of greedy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic pseudo-text corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="write curriculum augmentation previews")
    p.add_argument("--config", required=True)
    p.add_argument("--preview", required=True)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv=None):
    from .checkpoint import CheckpointError
    from .config import ConfigError
    from .train import NumericalError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"frbdet: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"frbdet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, CheckpointError) as exc:
        print(f"frbdet: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
