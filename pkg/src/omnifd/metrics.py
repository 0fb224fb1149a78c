"""Evaluation metrics for classification, spatial and temporal localization."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, ShapeMismatch, SingleClass

DEFAULT_TIOU_SET = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
IOU_THRESHOLD = 0.1
IOU_DIFF_THRESHOLD = 0.01


@dataclass
class MetricReport:
    task: str
    metric: str
    value: float
    support: int
    config: dict = field(default_factory=dict)

    def to_record(self):
        return asdict(self)


def _check_pair(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.size == 0:
        raise EmptyInput("no samples")
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"{scores.shape} scores vs {labels.shape} labels")
    return scores, labels


def accuracy(scores, labels, threshold=0.5):
    scores, labels = _check_pair(scores, labels)
    return float(np.mean((scores >= threshold) == labels))


def auc(scores, labels):
    """ROC AUC as the Mann-Whitney statistic (ties count one half)."""
    scores, labels = _check_pair(scores, labels)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _masks(pred, gt, threshold):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    return pred >= threshold, gt.astype(bool)


def iou_binary(pred_probs, gt_mask, threshold=IOU_THRESHOLD):
    p, g = _masks(pred_probs, gt_mask, threshold)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def pbca(pred_probs, gt_mask, threshold=0.5):
    p, g = _masks(pred_probs, gt_mask, threshold)
    return float(np.mean(p == g))


def iinc(pred_probs, gt_mask, threshold=0.5):
    """Symmetric non-containment score in [0, 1]; 0 is a perfect mask, lower is better."""
    p, g = _masks(pred_probs, gt_mask, threshold)
    np_, ng = p.sum(), g.sum()
    if np_ == 0 and ng == 0:
        return 0.0
    if np_ == 0 or ng == 0:
        return 1.0
    inter = np.logical_and(p, g).sum()
    return float(1.0 - 0.5 * (inter / np_ + inter / ng))


def tiou_matrix(a, b):
    """Pairwise tIoU between (n, 2) and (m, 2) interval arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.clip(np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
                    0, None)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def _as_pred_array(preds):
    """Normalize a per-video prediction list to an (n, 3) array of start, end, score."""
    rows = []
    for p in preds:
        if isinstance(p, dict):
            rows.append((p["start_s"], p["end_s"], p["score"]))
        elif hasattr(p, "score"):
            rows.append((p.start, p.end, p.score))
        else:
            rows.append(tuple(p))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def _match_video(pred, gts, threshold):
    """Greedy score-ordered matching; returns TP flags in the given prediction order."""
    tp = np.zeros(len(pred), dtype=bool)
    if len(pred) == 0 or len(gts) == 0:
        return tp
    ious = tiou_matrix(pred[:, :2], gts)
    used = np.zeros(len(gts), dtype=bool)
    for i in range(len(pred)):
        cand = np.where(used, -1.0, ious[i])
        j = int(np.argmax(cand))
        if cand[j] >= threshold:
            used[j] = True
            tp[i] = True
    return tp


def temporal_ap(predictions, ground_truths, tiou_threshold=0.5):
    """Average precision with all-point interpolation, pooled over videos.

    ``predictions`` and ``ground_truths`` are parallel lists (one entry per
    video); predictions are (start, end, score) triples, Segments or records,
    ground truths (start, end) pairs. With no ground truth at all the AP is 1
    if nothing was predicted and 0 otherwise.
    """
    scores, flags = [], []
    n_gt = 0
    for preds, gts in zip(predictions, ground_truths):
        pred = _as_pred_array(preds)
        gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
        n_gt += len(gts)
        order = np.argsort(-pred[:, 2], kind="stable")
        pred = pred[order]
        scores.append(pred[:, 2])
        flags.append(_match_video(pred, gts, tiou_threshold))
    scores = np.concatenate(scores) if scores else np.zeros(0)
    flags = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
    if n_gt == 0:
        return 1.0 if scores.size == 0 else 0.0
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order])
    precision = tp / np.arange(1, len(tp) + 1)
    recall = tp / n_gt
    # all-point interpolation: precision envelope times recall increments
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def mean_ap(predictions, ground_truths, thresholds=DEFAULT_TIOU_SET):
    aps = [temporal_ap(predictions, ground_truths, t) for t in thresholds]
    return float(np.mean(aps)), dict(zip((float(t) for t in thresholds), aps))


def average_recall(predictions, ground_truths, k, thresholds=DEFAULT_TIOU_SET):
    """AR@k: per-video recall of the top-k predictions, averaged over videos and thresholds.

    A ground-truth segment counts as recalled when any kept prediction
    reaches the threshold. Videos without ground truth score 1 when they have
    no predictions and 0 otherwise.
    """
    per_threshold = []
    for thr in thresholds:
        recalls = []
        for preds, gts in zip(predictions, ground_truths):
            pred = _as_pred_array(preds)
            gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
            pred = pred[np.argsort(-pred[:, 2], kind="stable")][:k]
            if len(gts) == 0:
                recalls.append(1.0 if len(pred) == 0 else 0.0)
                continue
            if len(pred) == 0:
                recalls.append(0.0)
                continue
            hit = (tiou_matrix(pred[:, :2], gts) >= thr).any(axis=0)
            recalls.append(hit.mean())
        per_threshold.append(np.mean(recalls) if recalls else 0.0)
    return float(np.mean(per_threshold))
