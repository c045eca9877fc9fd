import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from frbdet.head import (
    DetectionHead, LossWeights, aabb_iou, balanced_bce_loss, detection_loss, head_forward, quad_loss,
    rbox_loss, score_loss, total_loss,
)

from oracles import finite_difference_error

D = torch.float64


def test_zero_weights_activations():
    head = DetectionHead(8).double()
    for p in head.parameters():
        torch.nn.init.zeros_(p)
    score, (dist, angle), quad = head_forward(torch.randn(1, 8, 4, 4, dtype=D), head)
    assert torch.all(score == 0.5)
    assert torch.all(angle == 0)
    assert torch.all(dist == 64.0)
    assert not quad.any()


def test_channel_counts_and_ranges():
    torch.manual_seed(0)
    head = DetectionHead(8)
    out = head(100 * torch.randn(2, 8, 4, 4))
    assert [out[k].shape[1] for k in ("score", "distances", "angle", "quad")] == [1, 4, 1, 8]
    assert torch.all((out["score"] >= 0) & (out["score"] <= 1))
    assert torch.all(out["angle"].abs() <= math.pi / 4)
    assert torch.all((out["distances"] >= 0) & (out["distances"] <= 128))
    x = torch.randn(2, 8, 4, 4)
    assert all(torch.equal(a, b) for a, b in zip(head(x).values(), head(x).values()))


def test_score_loss_cases():
    gt = (torch.rand(1, 1, 6, 6, dtype=D) > 0.5).to(D)
    gt[0, 0, 0, 0] = 1
    assert score_loss(gt, gt).item() == 0.0
    assert score_loss(1 - gt, gt).item() == 1.0
    z = torch.zeros(1, 1, 3, 3, dtype=D)
    assert score_loss(z, z).item() == 0.0
    assert score_loss(torch.rand(1, 1, 3, 3, dtype=D), z, mask=z).item() == 0.0


def test_score_loss_scalar_oracle():
    rng = np.random.default_rng(0)
    p, g, m = rng.uniform(size=(3, 5, 5))
    m = (m > 0.3).astype(float)
    inter = sum(p[i, j] * g[i, j] * m[i, j] for i in range(5) for j in range(5))
    den = sum(p[i, j] * m[i, j] + g[i, j] * m[i, j] for i in range(5) for j in range(5))
    got = score_loss(torch.tensor(p), torch.tensor(g), torch.tensor(m)).item()
    assert abs(got - (1 - 2 * inter / den)) < 1e-12


def test_balanced_bce_is_positive_and_zero_on_empty_mask():
    gt = (torch.rand(1, 1, 4, 4) > 0.5).float()
    assert balanced_bce_loss(torch.rand(1, 1, 4, 4), gt).item() > 0
    assert balanced_bce_loss(torch.rand(1, 1, 4, 4), gt, torch.zeros_like(gt)).item() == 0


def _maps(d, theta, h=1, w=1):
    return (torch.tensor(d, dtype=D).reshape(1, 4, 1, 1).expand(1, 4, h, w),
            torch.full((1, 1, h, w), theta, dtype=D))


def test_rbox_loss_cases():
    one = torch.ones(1, 1, 1, 1, dtype=D)
    d, a = _maps([2, 2, 2, 2], 0.1)
    assert rbox_loss(d, a, d, a, one).item() == 0.0
    _, a2 = _maps([2, 2, 2, 2], 0.1 + math.pi / 2)
    assert rbox_loss(d, a2, d, a, one).item() == pytest.approx(10.0, abs=1e-12)
    small, a = _maps([1, 1, 1, 1], 0.0)
    big, _ = _maps([2, 2, 2, 2], 0.0)
    assert aabb_iou(small, big).item() == 0.25
    assert rbox_loss(small, a, big, a, one).item() == pytest.approx(-math.log(0.25), abs=1e-15)
    assert rbox_loss(small, a, big, a, torch.zeros_like(one)).item() == 0.0


def test_quad_loss_cases():
    gt = torch.randn(1, 8, 2, 2, dtype=D)
    mask = torch.zeros(1, 1, 2, 2, dtype=D)
    mask[0, 0, 0, 0] = 1
    short = torch.full((1, 1, 2, 2), 10.0, dtype=D)
    assert quad_loss(gt, gt, mask, short).item() == 0.0
    pred = gt.clone()
    pred[0, 3, 0, 0] += 5.0  # half the short edge
    assert quad_loss(pred, gt, mask, short).item() == pytest.approx(0.125, abs=1e-15)


def test_quad_loss_scalar_oracle():
    rng = np.random.default_rng(1)
    pred, gt = rng.normal(scale=8, size=(2, 8, 3, 3))
    mask = (rng.uniform(size=(3, 3)) > 0.4).astype(float)
    short = rng.uniform(2, 20, size=(3, 3))

    def sl1(x):
        return 0.5 * x * x if abs(x) < 1 else abs(x) - 0.5

    total = sum(mask[i, j] * sum(sl1((pred[c, i, j] - gt[c, i, j]) / short[i, j]) for c in range(8))
                for i in range(3) for j in range(3))
    ref = total / mask.sum()
    got = quad_loss(torch.tensor(pred)[None], torch.tensor(gt)[None], torch.tensor(mask)[None, None],
                    torch.tensor(short)[None, None]).item()
    assert abs(got - ref) < 1e-12


def test_total_loss_arithmetic():
    assert total_loss(0.0, 0.0, 0.0) == 0.0
    assert total_loss(0.2, 0.3, 0.0, LossWeights(geometry=1.0)) == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [dict(geometry=0), dict(angle=-1), dict(score_loss="focal")])
def test_invalid_weights(kw):
    with pytest.raises(ValueError):
        LossWeights(**kw)


def _targets(rng, h=4, w=4):
    score = (rng.uniform(size=(1, 1, h, w)) > 0.5).astype(float)
    score[0, 0, 0, 0] = 1
    return {
        "score": torch.tensor(score),
        "distances": torch.tensor(rng.uniform(1, 10, size=(1, 4, h, w))),
        "angle": torch.tensor(rng.uniform(-0.7, 0.7, size=(1, 1, h, w))),
        "quad": torch.tensor(rng.normal(scale=5, size=(1, 8, h, w))),
        "mask": torch.ones(1, 1, h, w, dtype=D),
        "short_edge": torch.tensor(rng.uniform(3, 12, size=(1, 1, h, w))),
    }


def test_total_loss_gradient_wrt_head_outputs():
    rng = np.random.default_rng(4)
    tgt = _targets(rng)
    outs = [torch.tensor(rng.uniform(0.1, 0.9, size=(1, 1, 4, 4))),
            torch.tensor(rng.uniform(1, 10, size=(1, 4, 4, 4))),
            torch.tensor(rng.uniform(-0.7, 0.7, size=(1, 1, 4, 4))),
            # keep offsets away from the smooth-L1 kink
            tgt["quad"] + torch.tensor(rng.uniform(0.1, 0.4, size=(1, 8, 4, 4))) * tgt["short_edge"]]

    def fn(s, d, a, q):
        return detection_loss({"score": s, "distances": d, "angle": a, "quad": q}, tgt,
                              LossWeights(geometry=1.0))[0]

    assert finite_difference_error(fn, outs) < 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_losses_nonnegative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    tgt = _targets(rng)
    out = {"score": torch.tensor(rng.uniform(size=(1, 1, 4, 4))),
           "distances": torch.tensor(rng.uniform(0.5, 10, size=(1, 4, 4, 4))),
           "angle": torch.tensor(rng.uniform(-0.7, 0.7, size=(1, 1, 4, 4))),
           "quad": torch.tensor(rng.normal(scale=5, size=(1, 8, 4, 4)))}
    total, parts = detection_loss(out, tgt)
    assert all(v.item() >= 0 for v in parts.values()) and total.item() >= 0
    perm = torch.tensor(rng.permutation(16))

    def shuffle(t):
        return t.flatten(-2)[..., perm].reshape(t.shape)

    total2, _ = detection_loss({k: shuffle(v) for k, v in out.items()}, {k: shuffle(v) for k, v in tgt.items()})
    assert total2.item() == pytest.approx(total.item(), rel=1e-12)


def test_perfect_prediction_is_zero():
    tgt = _targets(np.random.default_rng(9))
    out = {"score": tgt["score"], "distances": tgt["distances"], "angle": tgt["angle"], "quad": tgt["quad"]}
    total, _ = detection_loss(out, tgt)
    assert total.item() == pytest.approx(0.0, abs=1e-12)
