"""Prediction, the raw prediction dump, and metric scoring.

Prediction dump (``predictions.jsonl``), one record per sample::

    {"sample_id", "modality", "label", "logit", "score",
     "segments": [{"start_s", "end_s", "score"}, ...]}      # videos with a temporal head

Spatial mask logits go to ``mask_logits.npz`` keyed by sample_id, plus one
8-bit grayscale PNG per image under ``masks/`` when requested. Any detector
that writes these files can be scored with :func:`score_predictions`.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import DecodeConfig
from .data.dataset import BatchSpec, SplitData, make_batch
from .heads import decode_segments
from .metrics import (DEFAULT_TIOU_SET, IOU_DIFF_THRESHOLD, IOU_THRESHOLD, MetricReport, accuracy,
                      auc, average_recall, iinc, iou_binary, mean_ap, pbca, temporal_ap)
from .model import IMAGE_TASKS, VIDEO_TASKS, OmniFD

PRIMARY_METRIC = {"image_cls": "acc", "video_cls": "acc", "spatial_loc": "iou",
                  "temporal_loc": "map"}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


@torch.no_grad()
def predict(model: OmniFD, data: SplitData, spec: BatchSpec, tasks=None, decode=None,
            batch_size=32):
    """Run the model over a split; returns (records, mask_logits dict, video gt in seconds)."""
    tasks = tuple(tasks or model.tasks)
    model.require(tasks)
    decode = decode or DecodeConfig()
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    records, mask_logits, video_gts = [], {}, {}
    if set(tasks) & set(IMAGE_TASKS) and data.n_images:
        for lo in range(0, data.n_images, batch_size):
            idx = np.arange(lo, min(lo + batch_size, data.n_images))
            batch = make_batch(data, idx, [], spec, train=False, dtype=dtype)
            out = model.forward_image(batch["images"])
            for j, i in enumerate(idx):
                rec = data.image_records[i]
                row = {"sample_id": rec.sample_id, "modality": "image", "label": int(rec.is_fake)}
                if "image_cls" in tasks:
                    row["logit"] = float(out["image_logit"][j])
                    row["score"] = float(_sigmoid(row["logit"]))
                if "spatial_loc" in tasks:
                    mask_logits[rec.sample_id] = out["spatial_mask"][j].double().numpy()
                records.append(row)
    if set(tasks) & set(VIDEO_TASKS) and data.n_videos:
        tp = model.temporal_stride()
        bs = max(1, batch_size // 4)
        for lo in range(0, data.n_videos, bs):
            idx = np.arange(lo, min(lo + bs, data.n_videos))
            batch = make_batch(data, [], idx, spec, train=False, temporal_patch=tp, dtype=dtype)
            out = model.forward_video(batch["videos"])
            for j, i in enumerate(idx):
                rec = data.video_records[i]
                row = {"sample_id": rec.sample_id, "modality": "video", "label": int(rec.is_fake)}
                if "video_cls" in tasks:
                    row["logit"] = float(out["video_logit"][j])
                    row["score"] = float(_sigmoid(row["logit"]))
                if "temporal_loc" in tasks:
                    segs = decode_segments(out["temporal_cls"][j].double().numpy(),
                                           out["temporal_reg"][j].double().numpy(),
                                           batch["seconds_per_position"], decode.score_threshold,
                                           decode.nms_tiou, decode.max_keep)
                    row["segments"] = [s.to_record() for s in segs]
                video_gts[rec.sample_id] = batch["video_segments_s"][j]
                records.append(row)
    model.train(was_training)
    return records, mask_logits, video_gts


def score_predictions(records, mask_logits, data: SplitData, tasks, video_gts=None,
                      tiou_set=DEFAULT_TIOU_SET):
    """Compute every applicable MetricReport from prediction records."""
    by_id = {r["sample_id"]: r for r in records}
    reports = []
    if "image_cls" in tasks:
        rows = [by_id[r.sample_id] for r in data.image_records]
        s, y = [r["score"] for r in rows], [r["label"] for r in rows]
        reports += [MetricReport("image_cls", "acc", accuracy(s, y), len(rows), {"threshold": 0.5}),
                    MetricReport("image_cls", "auc", auc(s, y), len(rows))]
    if "video_cls" in tasks:
        rows = [by_id[r.sample_id] for r in data.video_records]
        s, y = [r["score"] for r in rows], [r["label"] for r in rows]
        reports += [MetricReport("video_cls", "acc", accuracy(s, y), len(rows), {"threshold": 0.5}),
                    MetricReport("video_cls", "auc", auc(s, y), len(rows))]
    if "spatial_loc" in tasks:
        fakes = [r for r in data.image_records if r.is_fake]
        probs = [_sigmoid(mask_logits[r.sample_id]) for r in fakes]
        gts = [r.mask for r in fakes]
        n = len(fakes)
        for name, fn, thr in (("iou", iou_binary, IOU_THRESHOLD), ("iou_diff", iou_binary, IOU_DIFF_THRESHOLD),
                              ("pbca", pbca, 0.5), ("iinc", iinc, 0.5)):
            value = float(np.mean([fn(p, g, thr) for p, g in zip(probs, gts)])) if n else float("nan")
            reports.append(MetricReport("spatial_loc", name, value, n, {"threshold": thr}))
    if "temporal_loc" in tasks:
        recs = data.video_records
        if video_gts is None:
            video_gts = {r.sample_id: list(r.segments) for r in recs}
        preds = [by_id[r.sample_id].get("segments", []) for r in recs]
        gts = [video_gts[r.sample_id] for r in recs]
        m, per = mean_ap(preds, gts, tiou_set)
        fake_preds = [p for p, r in zip(preds, recs) if r.is_fake]
        fake_gts = [g for g, r in zip(gts, recs) if r.is_fake]
        reports += [MetricReport("temporal_loc", "ap@0.5", temporal_ap(preds, gts, 0.5), len(recs),
                                 {"tiou": 0.5}),
                    MetricReport("temporal_loc", "map", m, len(recs), {"tiou_set": list(per)}),
                    MetricReport("temporal_loc", "ar@1", average_recall(fake_preds, fake_gts, 1, tiou_set),
                                 len(fake_gts), {"k": 1}),
                    MetricReport("temporal_loc", "ar@5", average_recall(fake_preds, fake_gts, 5, tiou_set),
                                 len(fake_gts), {"k": 5})]
    return reports


def primary_score(reports):
    """Mean of the primary metric of every present task (checkpoint selection)."""
    vals = [r.value for r in reports if PRIMARY_METRIC.get(r.task) == r.metric]
    return float(np.mean(vals)) if vals else float("nan")


def write_prediction_dump(out_dir, records, mask_logits, write_mask_images=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "predictions.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    if mask_logits:
        np.savez_compressed(out_dir / "mask_logits.npz", **mask_logits)
        if write_mask_images:
            from PIL import Image
            (out_dir / "masks").mkdir(exist_ok=True)
            for sid, logits in mask_logits.items():
                img = np.round(_sigmoid(logits) * 255).astype(np.uint8)
                Image.fromarray(img).save(out_dir / "masks" / f"{sid}.png")


def read_prediction_dump(out_dir):
    out_dir = Path(out_dir)
    with open(out_dir / "predictions.jsonl") as fh:
        records = [json.loads(line) for line in fh]
    masks = {}
    if (out_dir / "mask_logits.npz").exists():
        masks = dict(np.load(out_dir / "mask_logits.npz"))
    return records, masks


def write_reports(out_dir, reports, stem="metrics"):
    """Metric records as JSONL plus a tab-separated summary table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.jsonl", "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record()) + "\n")
    lines = ["task\tmetric\tvalue\tsupport"]
    lines += [f"{r.task}\t{r.metric}\t{r.value:.4f}\t{r.support}" for r in reports]
    (out_dir / f"{stem}.tsv").write_text("\n".join(lines) + "\n")
    return "\n".join(lines)


def evaluate(model, data, spec, tasks=None, decode=None, out_dir=None, batch_size=32,
             write_mask_images=True):
    tasks = tuple(tasks or model.tasks)
    records, masks, video_gts = predict(model, data, spec, tasks, decode, batch_size)
    reports = score_predictions(records, masks, data, tasks, video_gts)
    if out_dir is not None:
        write_prediction_dump(out_dir, records, masks, write_mask_images)
        write_reports(out_dir, reports)
        if video_gts:
            (Path(out_dir) / "video_gt_segments.json").write_text(json.dumps(video_gts))
    return reports
