"""Per-task losses and their unweighted sum.

Localization losses only see forged samples: real samples contribute neither
to the loss value nor to its normalizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .errors import NoTaskPresent, SegmentOutOfRange, ShapeMismatch

LOSS_KEYS = ("l_img", "l_sp", "l_vid", "l_tmp")


def loss_binary(logits, labels):
    """Mean sigmoid cross-entropy; ``binary_cross_entropy_with_logits`` is log-sum-exp stable."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=logits.dtype)
    return F.binary_cross_entropy_with_logits(logits, labels)


def loss_spatial(mask_logits, gt_masks, is_fake):
    """Mean per-pixel BCE over forged samples; (B, H, W) inputs, ``is_fake`` (B,) bool."""
    if mask_logits.shape != gt_masks.shape:
        raise ShapeMismatch(f"mask logits {tuple(mask_logits.shape)} vs gt {tuple(gt_masks.shape)}")
    is_fake = torch.as_tensor(is_fake, dtype=torch.bool)
    if not is_fake.any():
        return mask_logits.new_zeros(())
    return F.binary_cross_entropy_with_logits(mask_logits[is_fake],
                                              gt_masks[is_fake].to(mask_logits.dtype))


def sigmoid_focal_loss(logits, targets, gamma=2.0, alpha=0.25):
    """Elementwise focal loss (no reduction)."""
    p = torch.sigmoid(logits)
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
    return alpha_t * (1 - p_t) ** gamma * ce


def diou_loss_1d(pred, target, eps=1e-8):
    """1 - tIoU + (center distance / enclosing span)^2 for (..., 2) intervals."""
    ps, pe = pred[..., 0], pred[..., 1]
    ts, te = target[..., 0], target[..., 1]
    inter = (torch.minimum(pe, te) - torch.maximum(ps, ts)).clamp(min=0)
    union = (pe - ps) + (te - ts) - inter
    tiou = inter / union.clamp(min=eps)
    span = torch.maximum(pe, te) - torch.minimum(ps, ts)
    center = 0.5 * (ps + pe) - 0.5 * (ts + te)
    return 1 - tiou + center ** 2 / span.clamp(min=eps) ** 2


def assign_targets(gt_segments, T):
    """Per-timestep labels and enclosing segment (grid units) for one video.

    A timestep is positive when it lies inside a segment, boundaries
    included; when segments touch, the shortest enclosing one wins.
    """
    labels = torch.zeros(T)
    enclosing = torch.zeros(T, 2)
    best_len = torch.full((T,), float("inf"))
    t = torch.arange(T, dtype=torch.float64)
    for start, end in gt_segments:
        if start < 0 or end > T + 1e-9 or end <= start:
            raise SegmentOutOfRange(f"segment ({start}, {end}) outside grid [0, {T}]")
        inside = (t >= start) & (t <= end) & (end - start < best_len.double())
        labels[inside] = 1
        enclosing[inside] = torch.tensor([start, end], dtype=enclosing.dtype)
        best_len[inside] = end - start
    return labels, enclosing


def loss_temporal(s_cls, s_reg, gt_segments, is_fake, gamma=2.0, alpha=0.25):
    """Focal + DIoU losses over forged videos.

    s_cls: (B, T, 1) logits; s_reg: (B, T, 2) nonnegative offsets;
    gt_segments: per video a list of (start, end) in feature-grid units.
    Focal loss is summed over all timesteps of forged videos and divided by the
    total positive count (at least 1); DIoU is averaged over positive timesteps.
    """
    is_fake = torch.as_tensor(is_fake, dtype=torch.bool)
    zero = s_cls.new_zeros(())
    if not is_fake.any():
        return zero, zero
    B, T = s_cls.shape[:2]
    idx = is_fake.nonzero().squeeze(1).tolist()
    labels, enclosing = [], []
    for i in idx:
        lab, enc = assign_targets(gt_segments[i], T)
        labels.append(lab)
        enclosing.append(enc)
    labels = torch.stack(labels).to(s_cls.dtype)
    enclosing = torch.stack(enclosing).to(s_cls.dtype)
    logits = s_cls[idx, :, 0]
    reg = s_reg[idx]
    num_pos = labels.sum()
    focal = sigmoid_focal_loss(logits, labels, gamma, alpha).sum() / num_pos.clamp(min=1)
    pos = labels > 0
    if not pos.any():
        return focal, zero
    t = torch.arange(T, dtype=s_cls.dtype).expand(len(idx), T)
    pred = torch.stack([t - reg[..., 0], t + reg[..., 1]], dim=-1)
    diou = diou_loss_1d(pred[pos], enclosing[pos]).mean()
    return focal, diou


def _scalar(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


@dataclass
class LossReport:
    l_img: torch.Tensor | float = 0.0
    l_sp: torch.Tensor | float = 0.0
    l_vid: torch.Tensor | float = 0.0
    l_tmp: torch.Tensor | float = 0.0
    present: dict = field(default_factory=dict)
    total: torch.Tensor | float = 0.0

    def as_floats(self):
        row = {k: _scalar(getattr(self, k)) for k in LOSS_KEYS}
        row["total"] = _scalar(self.total)
        row["present"] = {k: bool(self.present.get(k, False)) for k in LOSS_KEYS}
        return row


def total_loss(components):
    """Unweighted sum of the present components.

    ``components`` maps a key of LOSS_KEYS to a tensor (or a tuple of tensors
    that are summed, e.g. focal and DIoU for l_tmp). Missing keys are absent.
    """
    present = {k: k in components and components[k] is not None for k in LOSS_KEYS}
    if not any(present.values()):
        raise NoTaskPresent("no task loss present")
    report = LossReport(present=present)
    total = None
    for k in LOSS_KEYS:
        if not present[k]:
            continue
        value = components[k]
        if isinstance(value, (tuple, list)):
            value = sum(value[1:], value[0])
        setattr(report, k, value)
        total = value if total is None else total + value
    report.total = total
    return report
