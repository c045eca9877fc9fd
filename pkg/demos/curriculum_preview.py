"""Show how the curriculum hardens samples stage by stage.

Prints the default stage table, the difficulty rank of each synthetic image,
and which images each stage admits.  Run: python demos/curriculum_preview.py
"""
import tempfile
from pathlib import Path

import numpy as np

from frbdet.data import CurriculumSchedule, apply_mask, apply_pixel_blur, generate_synthetic_dataset, load_sample

work = Path(tempfile.mkdtemp(prefix="frbdet-curriculum-"))
records = generate_synthetic_dataset(10, 128, 3, work)
schedule = CurriculumSchedule.default(900)
print("schedule:", schedule.format())

scores = np.array([r.difficulty for r in records])
ranks = scores.argsort().argsort() / max(len(scores) - 1, 1)
for stage in schedule.stages:
    admitted = int((ranks <= stage.cutoff).sum())
    print(f"from iteration {stage.start}: blur {stage.blur:.2f} mask {stage.mask:.2f} -> {admitted} of {len(records)} images")

image, polys = load_sample(records[0])
last = schedule.stages[-1]
hard = apply_mask(apply_pixel_blur(image, last.blur, seed=0), polys, last.mask, seed=0)
print("pixels changed at the final stage:", int((np.abs(hard - image) > 1e-6).any(axis=0).sum()))
