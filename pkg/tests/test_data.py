import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frbdet.data import (
    CurriculumLoader, CurriculumSchedule, SampleRecord, Stage, apply_mask, apply_pixel_blur,
    curriculum_iter, difficulty_factors, generate_synthetic_dataset, laplacian_variance, rank_difficulty,
    read_manifest,
)
from frbdet.geometry import TextPolygon, polygon_iou, read_gt_file


def rect_poly(x0, y0, w, h, ignore=False):
    return TextPolygon([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]], ignore=ignore)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    return out, generate_synthetic_dataset(12, 64, 3, out)


# blur

def test_blur_zero_fraction_unchanged():
    img = np.random.default_rng(0).uniform(size=(3, 16, 16))
    out = apply_pixel_blur(img, 0.0, 1)
    assert np.array_equal(out, img) and out is not img


def test_blur_constant_image_unchanged():
    img = np.full((3, 16, 16), 0.3)
    np.testing.assert_allclose(apply_pixel_blur(img, 1.0, 0), img, atol=1e-15)


def test_blur_counts_sites_and_is_deterministic():
    img = np.random.default_rng(1).uniform(size=(3, 32, 32))
    a = apply_pixel_blur(img, 0.25, 42)
    changed = (a != img).any(axis=0)
    assert changed.sum() == 256
    assert np.array_equal(a, apply_pixel_blur(img, 0.25, 42))
    assert not np.array_equal(a, apply_pixel_blur(img, 0.25, 43))


def test_blur_site_value_matches_gaussian():
    img = np.random.default_rng(2).uniform(size=(3, 8, 8))
    out = apply_pixel_blur(img, 1.0, 0)
    t = np.exp(-np.array([1.0, 0.0, 1.0]) / 2)
    k = np.outer(t, t) / np.outer(t, t).sum()
    np.testing.assert_allclose(out[:, 3, 4], (img[:, 2:5, 3:6] * k).sum(axis=(1, 2)), atol=1e-14)


@pytest.mark.parametrize("fn", [lambda im: apply_pixel_blur(im, 1.5, 0), lambda im: apply_mask(im, [], -0.1, 0)])
def test_fraction_range_checked(fn):
    with pytest.raises(ValueError):
        fn(np.zeros((3, 8, 8)))


# mask

def test_mask_noop_cases():
    img = np.random.default_rng(0).uniform(size=(3, 32, 32))
    assert np.array_equal(apply_mask(img, [rect_poly(2, 2, 20, 20)], 0.0, 0), img)
    assert np.array_equal(apply_mask(img, [], 0.5, 0), img)
    assert np.array_equal(apply_mask(img, [rect_poly(2, 2, 20, 20, ignore=True)], 0.5, 0), img)


def test_mask_area():
    img = np.random.default_rng(0).uniform(size=(3, 40, 40))
    out = apply_mask(img, [rect_poly(5, 5, 20, 20)], 0.5, 3)
    masked = (out != img).any(axis=0).sum()
    # round(20 * sqrt(0.5)) = 14 per side
    assert masked == 196 and abs(masked - 200) <= 2 * 20
    filled = out[:, (out != img).any(axis=0)]
    np.testing.assert_allclose(filled, np.repeat(img.reshape(3, -1).mean(1)[:, None], masked, 1))
    assert ((out != img).any(axis=0)[:5]).sum() == 0


def test_mask_leaves_ground_truth():
    poly = rect_poly(5, 5, 20, 20)
    before = poly.points.copy()
    apply_mask(np.zeros((3, 40, 40)), [poly], 0.8, 0)
    assert np.array_equal(poly.points, before)


# difficulty

def test_difficulty_floor_and_monotone():
    rng = np.random.default_rng(0)
    sharp = rng.uniform(size=(3, 64, 64))
    base = rank_difficulty([], sharp)
    assert base < 0.01
    one = rank_difficulty([rect_poly(0, 0, 30, 20)], sharp)
    two = rank_difficulty([rect_poly(0, 0, 30, 20), rect_poly(0, 30, 30, 20)], sharp)
    assert base < one < two
    smallbox = rank_difficulty([rect_poly(0, 0, 30, 5), rect_poly(0, 30, 30, 20)], sharp)
    assert smallbox > two
    blurry = rank_difficulty([rect_poly(0, 0, 30, 20)], np.full((3, 64, 64), 0.5))
    assert blurry > one


def test_difficulty_ordering_hand_set():
    rng = np.random.default_rng(1)
    images = [rng.uniform(size=(3, 32, 32)), np.full((3, 32, 32), 0.4), rng.uniform(size=(3, 32, 32))]
    gts = [[rect_poly(0, 0, 20, 20)], [rect_poly(0, 0, 20, 20)] * 3, [rect_poly(0, 0, 20, 8)] * 2]
    got = [rank_difficulty(g, im) for g, im in zip(gts, images)]
    ref = []
    for g, im in zip(gts, images):
        n = len(g)
        small = sum(min(np.ptp(p.points, axis=0)) < 12 for p in g) / n
        gray = im.mean(0)
        pad = np.pad(gray, 1, mode="edge")
        lap = pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:] - 4 * gray
        ref.append((n / (n + 5) + small + 1 / (1 + lap.var() / 0.01)) / 3)
    np.testing.assert_allclose(got, ref, rtol=1e-12)
    assert np.argsort(got).tolist() == np.argsort(ref).tolist()


def test_laplacian_of_constant_is_zero():
    assert laplacian_variance(np.ones((3, 8, 8))) == 0.0
    assert difficulty_factors([], np.ones((3, 8, 8)))[2] == 1.0


# schedule

def test_schedule_lookup():
    s = CurriculumSchedule.default(300)
    assert s.stage_at(0) == s.stages[0]
    assert s.stage_at(99) == s.stages[0]
    assert s.stage_at(100) == s.stages[1]
    assert s.stage_at(10**6) == s.stages[2]


@pytest.mark.parametrize("stages", [
    [], [(1, 0, 0, 1)], [(0, 0, 0, 1), (0, 0, 0, 1)], [(0, 0.2, 0, 1), (5, 0.1, 0, 1)],
    [(0, 0, 0.2, 1), (5, 0, 0.1, 1)], [(0, 0, 0, 1), (5, 0, 0, 0.5)], [(0, 1.2, 0, 1)],
])
def test_schedule_validation(stages):
    with pytest.raises(ValueError):
        CurriculumSchedule(stages)


@settings(max_examples=40, deadline=None)
@given(total=st.integers(1, 10**6))
def test_default_schedule_monotone(total):
    st_ = CurriculumSchedule.default(total).stages
    for a, b in zip(st_, st_[1:]):
        assert a.start < b.start and a.blur <= b.blur and a.mask <= b.mask and a.cutoff <= b.cutoff


def test_schedule_text_roundtrip():
    s = CurriculumSchedule([Stage(0, 0, 0, 0.5), Stage(10, 0.1, 0.05, 1)])
    assert CurriculumSchedule.parse(s.format()) == s


# synthetic corpus and loader

def test_synthetic_empty(tmp_path):
    assert generate_synthetic_dataset(0, 64, 0, tmp_path) == []


def test_synthetic_deterministic_and_valid(tmp_path, corpus):
    out, records = corpus
    again = generate_synthetic_dataset(12, 64, 3, tmp_path)
    for a, b in zip(records, again):
        with open(a.image_path, "rb") as fa, open(b.image_path, "rb") as fb:
            assert fa.read() == fb.read()
        with open(a.gt_path, "rb") as fa, open(b.gt_path, "rb") as fb:
            assert fa.read() == fb.read()
        assert a.difficulty == b.difficulty
    for r in records:
        polys = read_gt_file(r.gt_path)
        assert 1 <= len(polys) <= 3
        for i, p in enumerate(polys):
            x, y = p.points[:, 0], p.points[:, 1]
            assert 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)) > 0
            assert p.points.min() >= 0 and p.points.max() <= 64
            for q in polys[i + 1:]:
                assert polygon_iou(p.points, q.points) == 0


def test_manifest_roundtrip(corpus):
    out, records = corpus
    back = read_manifest(out / "manifest.tsv")
    assert [r.image_path for r in back] == [r.image_path for r in records]
    np.testing.assert_allclose([r.difficulty for r in back], [r.difficulty for r in records], atol=1e-12)


def _loader(records, **kw):
    kw.setdefault("schedule", CurriculumSchedule.default(30))
    return CurriculumLoader(records, batch_size=3, image_size=(64, 64), seed=5, **kw)


def test_loader_deterministic_and_prefetch_order(corpus):
    _, records = corpus
    seq = list(_loader(records).batches(0, 12))
    again = list(_loader(records).batches(0, 12, prefetch=3))
    for a, b in zip(seq, again):
        assert a["indices"] == b["indices"]
        assert np.array_equal(a["images"], b["images"])
        for k in a["targets"]:
            assert np.array_equal(a["targets"][k], b["targets"][k])


def test_loader_respects_cutoff(corpus):
    _, records = corpus
    loader = _loader(records)
    levels = loader.levels()
    assert sorted(levels.tolist()) == pytest.approx(np.linspace(0, 1, len(records)).tolist())
    for t in range(0, 10):
        b = loader.batch(t)
        assert all(levels[i] <= 0.5 for i in b["indices"])
        assert b["stage"] == loader.schedule.stages[0]
    assert len(loader.eligible(Stage(0, 0, 0, 1.0))) == len(records)


def test_loader_batch_contents(corpus):
    _, records = corpus
    b = _loader(records).batch(25)
    assert b["images"].shape == (3, 3, 64, 64) and b["images"].dtype == np.float32
    assert b["targets"]["score"].shape == (3, 1, 16, 16)
    assert b["targets"]["quad"].shape == (3, 8, 16, 16)
    assert b["stage"].blur == 0.25


def test_loader_empty_pool_falls_back(corpus):
    _, records = corpus
    loader = _loader(records, schedule=CurriculumSchedule([Stage(0, 0, 0, 0.0)]), rank_normalize=False)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        pool = loader.eligible(Stage(0, 0, 0, 0.0))
    assert caught and len(pool) == 2  # ceil(12 / 10)
    easiest = sorted(range(len(records)), key=lambda i: records[i].difficulty)[:2]
    assert sorted(pool) == sorted(easiest)


def test_loader_disabled_uses_everything(corpus):
    _, records = corpus
    loader = _loader(records, enabled=False)
    assert loader.eligible(Stage(0, 0, 0, 0.0)) == list(range(len(records)))
    assert loader.batch(29)["stage"].blur == 0.0


def test_curriculum_iter_function(corpus):
    _, records = corpus
    b = curriculum_iter(CurriculumSchedule.default(30), records, 0, batch_size=2, image_size=(64, 64))
    assert len(b["indices"]) == 2


def test_missing_image_raises(tmp_path):
    rec = SampleRecord(str(tmp_path / "nope.png"), str(tmp_path / "nope.txt"))
    with pytest.raises(OSError):
        _loader([rec]).batch(0)
