"""The ten acceptance criteria, each reported as one PASS/FAIL line.

Criterion 7 trains six desk-scale models and takes most of the suite's runtime.
"""
import io
import time

import numpy as np
import pytest
import torch

from conftest import criterion, finite_difference_check, tiny_encoder_config
from test_metrics import (ap_oracle, ar_oracle, auc_oracle, iinc_oracle, iou_oracle, pbca_oracle,
                          random_temporal_instance)
from omnifd.ablation import TABLE_ROWS, ablate_tasks
from omnifd.config import ExperimentConfig
from omnifd.data.dataset import BatchSpec, BenchmarkConfig, generate_benchmark, generate_split, make_batch
from omnifd.efficiency import efficiency_report
from omnifd.encoder import EncoderConfig, FeaturePyramid, UnifiedEncoder, encode, to_unified_tensor
from omnifd.heads import ClassificationHead, SpatialHead, TemporalHead, decode_segments, interval_tiou
from omnifd.interaction import CrossTaskInteraction, InteractionConfig
from omnifd.losses import assign_targets, loss_binary, loss_spatial, loss_temporal
from omnifd.metrics import DEFAULT_TIOU_SET, auc, average_recall, iinc, iou_binary, mean_ap, pbca, temporal_ap
from omnifd.model import ModelConfig, build_model, count_parameters
from omnifd.train import checkpoint_bytes, compute_losses, train

# per-run budget for the multi-task trend; six runs must fit in an hour on one core
TREND_STEPS = 2000
TREND_SEEDS = (0, 1, 2)
TREND_MARGIN = 0.01


def _smoke_benchmark():
    return BenchmarkConfig(n_train_images=64, n_train_videos=16, n_val_images=32, n_val_videos=8)


def test_01_unification_identity():
    with criterion(1, "image == 1-frame video through the encoder, 50 images") as box:
        t0 = time.perf_counter()
        torch.manual_seed(0)
        enc = UnifiedEncoder(EncoderConfig()).eval()
        rng = np.random.default_rng(0)
        worst = 0.0
        with torch.no_grad():
            for _ in range(50):
                img = rng.random((32, 32, 3))
                a = encode(enc, to_unified_tensor(img))
                b = encode(enc, to_unified_tensor(img[None], frame_count=1))
                worst = max(worst, max((fa - fb).abs().max().item() for fa, fb in zip(a.levels, b.levels)))
        box["detail"] = f"max |diff| = {worst:.2e}, {time.perf_counter() - t0:.1f}s"
        assert worst <= 1e-6


def test_02_gradient_suite():
    with criterion(2, "finite-difference gradients, float64, <=5k params") as box:
        torch.manual_seed(0)
        errors = {}

        enc = UnifiedEncoder(tiny_encoder_config()).double()
        assert count_parameters(enc) <= 5000
        x = torch.randn(1, 2, 16, 16, 3, dtype=torch.float64)
        w_enc = [torch.randn_like(f) for f in enc(x).levels]
        errors["encoder"] = finite_difference_check(
            lambda: sum((f * w).sum() for f, w in zip(enc(x).levels, w_enc)), list(enc.parameters()))

        inter = CrossTaskInteraction(InteractionConfig(num_queries=3, dim=8, depth=2, heads=2,
                                                       ffn_expansion=2), (4, 8)).double()
        assert count_parameters(inter) <= 5000
        fp = FeaturePyramid([torch.randn(1, 2, 2, 2, 4, dtype=torch.float64),
                             torch.randn(1, 2, 1, 1, 8, dtype=torch.float64)], [(1, 4), (1, 8)])
        w_q = torch.randn(1, 3, 8, dtype=torch.float64)
        errors["interaction"] = finite_difference_check(lambda: (inter(fp) * w_q).sum(),
                                                        list(inter.parameters()))

        q = torch.randn(1, 3, 8, dtype=torch.float64)
        for name in ("image_cls", "video_cls"):
            head = ClassificationHead(8).double()
            errors[name] = finite_difference_check(lambda: head(q).sum() * 1.3, list(head.parameters()))
        sp = SpatialHead((4, 8), 8, 3).double()
        fp_img = FeaturePyramid([torch.randn(1, 1, 4, 4, 4, dtype=torch.float64),
                                 torch.randn(1, 1, 2, 2, 8, dtype=torch.float64)], [(1, 4), (1, 8)])
        w_m = torch.randn(1, 8, 8, dtype=torch.float64)
        errors["spatial_loc"] = finite_difference_check(lambda: (sp(fp_img, q, (8, 8)) * w_m).sum(),
                                                        list(sp.parameters()))
        tp = TemporalHead(8, 8, 2, ffn_expansion=1).double()
        fp_vid = FeaturePyramid([torch.randn(1, 5, 2, 2, 8, dtype=torch.float64)], [(1, 4)])
        w_t = torch.randn(1, 5, 3, dtype=torch.float64)
        errors["temporal_loc"] = finite_difference_check(
            lambda: (torch.cat(tp(fp_vid, q), -1) * w_t).sum(), list(tp.parameters()))
        assert all(count_parameters(m) <= 5000 for m in (sp, tp))

        logits = torch.randn(6, dtype=torch.float64, requires_grad=True)
        y = torch.tensor([0, 1, 1, 0, 1, 0], dtype=torch.float64)
        errors["loss_binary"] = finite_difference_check(lambda: loss_binary(logits, y), [logits])
        mask = torch.randn(2, 3, 3, dtype=torch.float64, requires_grad=True)
        gt = (torch.rand(2, 3, 3) > 0.5).double()
        errors["loss_spatial"] = finite_difference_check(lambda: loss_spatial(mask, gt, [True, True]), [mask])
        s_cls = torch.randn(2, 6, 1, dtype=torch.float64, requires_grad=True)
        s_reg = (torch.rand(2, 6, 2, dtype=torch.float64) + 0.5).requires_grad_()
        segs = [[(1.0, 3.0)], [(0.0, 1.0), (3.0, 5.0)]]
        errors["loss_focal"] = finite_difference_check(
            lambda: loss_temporal(s_cls, s_reg, segs, [True, True])[0], [s_cls])
        errors["loss_diou"] = finite_difference_check(
            lambda: loss_temporal(s_cls, s_reg, segs, [True, True])[1], [s_reg])

        worst = max(errors, key=errors.get)
        box["detail"] = f"worst {worst} rel err {errors[worst]:.2e} over {len(errors)} checks"
        assert all(e <= 1e-4 for e in errors.values()), errors


def test_03_metric_oracles():
    with criterion(3, "AUC, AP/mAP/AR, IoU, PBCA, IINC equal brute-force oracles, 200 instances") as box:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(2, 30))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = np.round(rng.random(n), 1)
            worst = max(worst, abs(auc(scores, labels) - auc_oracle(scores, labels)))

            shape = tuple(rng.integers(1, 7, 2))
            pred, gt = rng.random(shape), rng.random(shape) < rng.random()
            worst = max(worst, abs(iou_binary(pred, gt, 0.1) - iou_oracle(pred, gt, 0.1)),
                        abs(pbca(pred, gt) - pbca_oracle(pred, gt, 0.5)),
                        abs(iinc(pred, gt) - iinc_oracle(pred, gt, 0.5)))

            preds, gts = random_temporal_instance(rng)
            worst = max(worst, abs(temporal_ap(preds, gts, 0.5) - ap_oracle(preds, gts, 0.5)))
            m, _ = mean_ap(preds, gts)
            worst = max(worst, abs(m - np.mean([ap_oracle(preds, gts, t) for t in DEFAULT_TIOU_SET])))
            for k in (1, 5):
                worst = max(worst, abs(average_recall(preds, gts, k)
                                       - ar_oracle(preds, gts, k, DEFAULT_TIOU_SET)))
        box["detail"] = f"max |diff| = {worst:.1e}"
        assert worst <= 1e-9


def test_04_fake_only_masking():
    with criterion(4, "all-real batch gives zero localization-head gradients") as box:
        model = build_model(ModelConfig(), seed=0)
        data = generate_split(8, 4, seed=11, split="val")
        real_img = [r.index for r in data.image_records if not r.is_fake]
        real_vid = [r.index for r in data.video_records if not r.is_fake]
        batch = make_batch(data, real_img, real_vid, BatchSpec(), np.random.default_rng(0),
                           temporal_patch=model.temporal_stride())
        report = compute_losses(model, batch)
        report.total.backward()
        worst = 0.0
        for name in ("spatial_loc", "temporal_loc"):
            for p in model.heads[name].parameters():
                if p.grad is not None:
                    worst = max(worst, p.grad.abs().max().item())
        cls_grad = max(p.grad.abs().max().item() for p in model.heads["image_cls"].parameters())
        box["detail"] = f"max |grad| localization = {worst}, classification = {cls_grad:.2e}"
        assert worst == 0.0
        assert cls_grad > 0


def test_05_query_permutation_invariance():
    with criterion(5, "permuting learnable queries leaves every prediction unchanged") as box:
        model = build_model(ModelConfig(), seed=0).eval()
        g = torch.Generator().manual_seed(5)
        image, video = torch.randn(2, 1, 32, 32, 3, generator=g), torch.randn(2, 8, 32, 32, 3, generator=g)
        with torch.no_grad():
            before = {**model.forward_image(image), **model.forward_video(video)}
            perm = torch.randperm(model.interaction.cfg.num_queries, generator=g)
            model.interaction.queries.copy_(model.interaction.queries[perm])
            proj = model.heads["spatial_loc"].proj
            proj.weight.copy_(proj.weight[:, perm])
            after = {**model.forward_image(image), **model.forward_video(video)}
        diffs = {k: (before[k] - after[k]).abs().max().item() for k in before}
        worst = max(diffs, key=diffs.get)
        box["detail"] = f"max |diff| {diffs[worst]:.1e} on {worst}"
        assert set(diffs) >= {"image_logit", "spatial_mask", "video_logit", "temporal_cls", "temporal_reg"}
        assert diffs[worst] <= 1e-5


def test_06_segment_round_trip():
    with criterion(6, "ideal S_cls/S_reg decode back to ground truth, 100 videos") as box:
        data = generate_split(0, 200, seed=6, split="val")
        fakes = [r.index for r in data.video_records if r.is_fake]
        assert len(fakes) == 100
        spec = BatchSpec(0, 1, frame_count=data.videos.shape[1], frame_stride=1)
        batch = make_batch(data, [], fakes, spec, train=False)
        sec = batch["seconds_per_position"]
        T = spec.frame_count
        worst, n_segments = 1.0, 0
        for grid, truth in zip(batch["video_segments"], batch["video_segments_s"]):
            labels, enclosing = assign_targets(grid, T)
            t = torch.arange(T, dtype=torch.float32)
            s_cls = torch.where(labels > 0, 8.0, -8.0)
            s_reg = torch.stack([t - enclosing[:, 0], enclosing[:, 1] - t], -1) * labels[:, None]
            decoded = decode_segments(s_cls.numpy(), s_reg.numpy(), sec, score_threshold=0.5)
            assert len(decoded) == len(truth)
            for seg in truth:
                best = max(interval_tiou(seg, (d.start, d.end)) for d in decoded)
                worst = min(worst, best)
                n_segments += 1
        box["detail"] = f"min tIoU {worst:.4f} over {n_segments} segments"
        assert worst >= 0.99


@pytest.fixture(scope="module")
def desk_benchmark():
    return generate_benchmark(BenchmarkConfig())


def test_07_multi_task_trend(desk_benchmark):
    with criterion(7, "Video+Image beats Video-only on video accuracy by >= 1 point, 3 seeds") as box:
        t0 = time.perf_counter()
        result = ablate_tasks(ExperimentConfig(), ["Video", "Video+Image"], seeds=TREND_SEEDS,
                              data=desk_benchmark, steps=TREND_STEPS)
        minutes = (time.perf_counter() - t0) / 60
        single = result.mean("Video", "video_cls", "acc")
        joint = result.mean("Video+Image", "video_cls", "acc")
        per_seed = {(r["subset"], r["seed"]): r["value"] for r in result.runs
                    if r["task"] == "video_cls" and r["metric"] == "acc"}
        box["detail"] = (f"Video {100 * single:.2f} vs Video+Image {100 * joint:.2f}, "
                         f"gain {100 * (joint - single):+.2f} pts, {TREND_STEPS} steps/run, "
                         f"{minutes:.1f} min; per seed {per_seed}")
        assert TREND_STEPS <= 3000
        assert joint - single >= TREND_MARGIN
        assert minutes <= 60


def test_08_sharing_efficiency():
    with criterion(8, "unified params <= 50% of four single-task models") as box:
        report = efficiency_report(ModelConfig(), runs=0)
        box["detail"] = (f"ratio {report['sharing_ratio']:.6f} = {report['unified']['params']} / "
                         f"{report['sum_clone_params']}, reduction {100 * report['param_reduction']:.2f}%")
        assert report["sharing_ratio"] == report["unified"]["params"] / report["sum_clone_params"]
        assert report["sharing_ratio"] <= 0.5


def test_09_task_subset_matrix():
    with criterion(9, "all 8 task subsets train 100 steps and evaluate") as box:
        data = generate_benchmark(_smoke_benchmark())
        done = []
        for row in TABLE_ROWS:
            cfg = ExperimentConfig(model={"tasks": row}, total_steps=100, eval_every=0)
            trainer = train(cfg, data)
            reports = trainer.evaluate()
            assert trainer.step_count == 100
            assert all(np.isfinite(r["total"]) for r in trainer.log)
            assert {r.task for r in reports} == set(trainer.model.tasks)
            done.append(row)
        box["detail"] = ", ".join(done)
        assert len(done) == 8


def test_10_determinism_and_resume():
    with criterion(10, "same seed reproduces the loss log; resume is bitwise for 10 steps") as box:
        data = generate_benchmark(_smoke_benchmark())
        cfg = ExperimentConfig(total_steps=20, eval_every=0, seed=3)
        a = train(cfg, data)
        b = train(cfg, data)
        assert a.log == b.log
        first = train(cfg, data, steps=10)
        blob = checkpoint_bytes(first.state_dict())
        resumed = train(cfg, data, resume=torch.load(io.BytesIO(blob), weights_only=False))
        assert resumed.log == a.log[10:]
        same = all(torch.equal(p, q) for p, q in zip(a.model.parameters(), resumed.model.parameters()))
        box["detail"] = f"{len(a.log)} identical log rows, resumed losses {len(resumed.log)} bitwise, params equal={same}"
        assert same
