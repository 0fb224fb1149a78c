import math

import numpy as np
import pytest
import torch

from omnifd.errors import NoTaskPresent, SegmentOutOfRange, ShapeMismatch
from omnifd.losses import (assign_targets, diou_loss_1d, loss_binary, loss_spatial, loss_temporal,
                           sigmoid_focal_loss, total_loss)
from omnifd.model import build_model
from omnifd.train import compute_losses

from conftest import finite_difference_check, tiny_model_config


def test_binary_examples():
    for label in (0.0, 1.0):
        assert float(loss_binary(torch.tensor([0.0]), torch.tensor([label]))) == pytest.approx(math.log(2))
    assert float(loss_binary(torch.tensor([20.0]), torch.tensor([1.0]))) <= 1e-8
    assert float(loss_binary(torch.tensor([1.5]), torch.tensor([0.0]))) == pytest.approx(1.70141, abs=1e-5)
    # no overflow far out in the tails
    assert math.isfinite(float(loss_binary(torch.tensor([1e4]), torch.tensor([0.0]))))


def test_spatial_examples():
    logits = torch.zeros(1, 2, 2)
    gt = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
    assert float(loss_spatial(logits, gt, [True])) == pytest.approx(math.log(2))
    saturated = (gt * 2 - 1) * 40
    assert float(loss_spatial(saturated, gt, [True])) <= 1e-12
    assert float(loss_spatial(torch.randn(2, 2, 2), gt.expand(2, 2, 2), [False, False])) == 0.0
    with pytest.raises(ShapeMismatch):
        loss_spatial(torch.zeros(1, 2, 3), gt, [True])


def test_spatial_ignores_real_samples():
    gt = torch.randint(0, 2, (3, 4, 4)).float()
    logits = torch.randn(3, 4, 4)
    only_fake = loss_spatial(logits[:1], gt[:1], [True])
    mixed = loss_spatial(logits, gt, [True, False, False])
    assert float(mixed) == float(only_fake)


def test_diou_examples():
    loss = diou_loss_1d(torch.tensor([1.0, 3.0]), torch.tensor([1.0, 4.0]))
    assert float(loss) == pytest.approx(1 - 2 / 3 + 0.25 / 9, abs=1e-6)
    assert float(loss) == pytest.approx(0.36111, abs=1e-5)
    assert float(diou_loss_1d(torch.tensor([2.0, 5.0]), torch.tensor([2.0, 5.0]))) == 0.0


def test_temporal_diou_averages_positive_timesteps():
    s_cls = torch.zeros(1, 4, 1)
    s_reg = torch.tensor([[[1.0, 1.0]] * 4])
    labels, _ = assign_targets([(1.0, 4.0)], 4)
    assert labels.tolist() == [0, 1, 1, 1]
    _, diou = loss_temporal(s_cls, s_reg, [[(1.0, 4.0)]], [True])
    # candidates [t-1, t+1] against gt [1, 4]
    per_t = [1 - 1 / 4 + 1.5 ** 2 / 16,  # t=1: [0, 2], enclosure [0, 4]
             1 - 2 / 3 + 0.5 ** 2 / 9,   # t=2: [1, 3]
             1 - 2 / 3 + 0.5 ** 2 / 9]   # t=3: [2, 4]
    assert float(diou) == pytest.approx(np.mean(per_t), abs=1e-6)


def test_temporal_real_is_zero():
    focal, diou = loss_temporal(torch.randn(2, 4, 1), torch.rand(2, 4, 2), [[], []], [False, False])
    assert float(focal) == 0.0 and float(diou) == 0.0


def test_focal_normalization_and_bound():
    s_cls = torch.randn(1, 6, 1)
    s_reg = torch.rand(1, 6, 2)
    focal, _ = loss_temporal(s_cls, s_reg, [[(1.0, 2.0)]], [True])
    labels, _ = assign_targets([(1.0, 2.0)], 6)
    expected = sigmoid_focal_loss(s_cls[0, :, 0], labels).sum() / 2
    torch.testing.assert_close(focal, expected)
    x = torch.linspace(-8, 8, 101)
    for y in (torch.zeros(101), torch.ones(101)):
        ce = torch.nn.functional.binary_cross_entropy_with_logits(x, y, reduction="none")
        assert (sigmoid_focal_loss(x, y) <= ce).all()
        assert (sigmoid_focal_loss(x, y) >= 0).all()


def test_assign_targets_boundaries_and_ties():
    labels, enc = assign_targets([(0.0, 2.0), (2.0, 3.0)], 5)
    assert labels.tolist() == [1, 1, 1, 1, 0]
    # t=2 touches both; the shorter segment wins
    assert enc[2].tolist() == [2.0, 3.0]
    with pytest.raises(SegmentOutOfRange):
        assign_targets([(1.0, 9.0)], 5)


def test_total_loss_sum_and_flags():
    r = total_loss({"l_img": torch.tensor(1.0)})
    assert float(r.total) == 1.0 and r.as_floats()["present"]["l_sp"] is False
    r = total_loss({"l_img": torch.tensor(1.0), "l_sp": torch.tensor(2.0), "l_vid": torch.tensor(3.0),
                    "l_tmp": (torch.tensor(1.5), torch.tensor(2.5))})
    assert float(r.total) == 10.0
    with pytest.raises(NoTaskPresent):
        total_loss({})


def test_total_loss_additive():
    a, b = torch.tensor(0.3), torch.tensor(0.7)
    sep = total_loss({"l_img": a}).total + total_loss({"l_vid": b}).total
    joint = total_loss({"l_img": a, "l_vid": b}).total
    assert torch.equal(sep, joint)


def _batch(labels_img, labels_vid, seed=0):
    g = torch.Generator().manual_seed(seed)
    n_i, n_v = len(labels_img), len(labels_vid)
    return {
        "images": torch.randn(n_i, 1, 16, 16, 3, generator=g),
        "image_labels": torch.tensor(labels_img, dtype=torch.float32),
        "image_masks": (torch.rand(n_i, 16, 16, generator=g) > 0.5).float()
        * torch.tensor(labels_img, dtype=torch.float32).view(-1, 1, 1),
        "videos": torch.randn(n_v, 4, 16, 16, 3, generator=g),
        "video_labels": torch.tensor(labels_vid, dtype=torch.float32),
        "video_segments": [[(1.0, 2.0)] if y else [] for y in labels_vid],
    }


def test_all_real_batch_gives_zero_localization_gradients():
    model = build_model(tiny_model_config(), seed=0)
    report = compute_losses(model, _batch([0, 0], [0, 0]))
    report.total.backward()
    for name in ("spatial_loc", "temporal_loc"):
        for p in model.heads[name].parameters():
            assert p.grad is None or p.grad.abs().max().item() == 0.0
    assert any(p.grad is not None and p.grad.abs().max() > 0 for p in model.heads["image_cls"].parameters())


def test_mixed_step_sums_both_sub_batches():
    model = build_model(tiny_model_config(), seed=0)
    batch = _batch([0, 1], [1, 0])
    r = compute_losses(model, batch)
    img = compute_losses(model, {k: v for k, v in batch.items() if not k.startswith("video")})
    vid = compute_losses(model, {k: v for k, v in batch.items() if not k.startswith("image")})
    assert r.as_floats()["total"] == pytest.approx(img.as_floats()["total"] + vid.as_floats()["total"], rel=1e-6)
    assert all(r.present.values())


def test_loss_gradients():
    torch.manual_seed(0)
    logits = torch.randn(5, dtype=torch.float64, requires_grad=True)
    y = torch.tensor([0, 1, 1, 0, 1.0], dtype=torch.float64)
    assert finite_difference_check(lambda: loss_binary(logits, y), [logits]) <= 1e-4
    mask = torch.randn(2, 3, 3, dtype=torch.float64, requires_grad=True)
    gt = (torch.rand(2, 3, 3) > 0.5).double()
    assert finite_difference_check(lambda: loss_spatial(mask, gt, [True, True]), [mask]) <= 1e-4
    s_cls = torch.randn(2, 6, 1, dtype=torch.float64, requires_grad=True)
    s_reg = (torch.rand(2, 6, 2, dtype=torch.float64) + 0.5).requires_grad_()
    segs = [[(1.0, 3.0)], [(0.0, 1.0), (3.0, 5.0)]]
    assert finite_difference_check(lambda: loss_temporal(s_cls, s_reg, segs, [True, True])[0],
                                   [s_cls]) <= 1e-4
    assert finite_difference_check(lambda: loss_temporal(s_cls, s_reg, segs, [True, True])[1],
                                   [s_reg]) <= 1e-4
