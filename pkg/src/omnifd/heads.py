"""Task decoding heads and anchor-free segment decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import FeaturePyramid
from .errors import ImageNotSupported, VideoNotSupported, WidthMismatch
from .interaction import InteractionLayer

REG_FLOOR = 1e-3


@dataclass
class Segment:
    start: float
    end: float
    score: float

    def to_record(self):
        return {"start_s": float(self.start), "end_s": float(self.end), "score": float(self.score)}


class ClassificationHead(nn.Module):
    """Linear layer on the mean of the refined queries."""

    def __init__(self, dim):
        super().__init__()
        self.fc = nn.Linear(dim, 1)

    def forward(self, q_hat):
        return self.fc(q_hat.mean(dim=1)).squeeze(-1)


class SpatialHead(nn.Module):
    def __init__(self, level_dims, dim, num_queries):
        super().__init__()
        self.fuse = nn.Conv2d(sum(level_dims), dim, kernel_size=1)
        self.proj = nn.Linear(num_queries, 1)

    def spatial_fuse(self, fp: FeaturePyramid):
        """Resize every level to the level-1 grid, concatenate, 1x1 conv -> (B, H1, W1, C)."""
        if any(f.shape[1] != 1 for f in fp.levels):
            raise VideoNotSupported("spatial localization is defined for image inputs")
        H1, W1 = fp.levels[0].shape[2:4]
        maps = []
        for f in fp.levels:
            f = f[:, 0].permute(0, 3, 1, 2)
            if f.shape[-2:] != (H1, W1):
                f = F.interpolate(f, size=(H1, W1), mode="bilinear", align_corners=False)
            maps.append(f)
        return self.fuse(torch.cat(maps, dim=1)).permute(0, 2, 3, 1)

    def localize(self, f_sp, q_hat, out_size):
        """Mask logits (B, H, W) from the fused grid and refined queries."""
        if f_sp.shape[-1] != q_hat.shape[-1]:
            raise WidthMismatch(f"fused width {f_sp.shape[-1]} vs query width {q_hat.shape[-1]}")
        B, h, w, C = f_sp.shape
        sim = f_sp.reshape(B, h * w, C) @ q_hat.transpose(1, 2)  # B, hw, N
        logits = self.proj(sim).reshape(B, 1, h, w)
        if (h, w) != tuple(out_size):
            logits = F.interpolate(logits, size=tuple(out_size), mode="bilinear", align_corners=False)
        return logits[:, 0]

    def forward(self, fp, q_hat, out_size):
        return self.localize(self.spatial_fuse(fp), q_hat, out_size)


class TemporalHead(nn.Module):
    def __init__(self, last_dim, dim, heads, ffn_expansion=4, kernel_size=3):
        super().__init__()
        self.input_proj = nn.Linear(last_dim, dim)
        self.enhance = InteractionLayer(dim, heads, ffn_expansion)
        self.conv_cls = nn.Conv1d(dim, 1, kernel_size, padding=kernel_size // 2)
        self.conv_reg = nn.Conv1d(dim, 2, kernel_size, padding=kernel_size // 2)

    def temporal_feature(self, f_last):
        """Spatial average of the last pyramid level per timestep, projected to width C."""
        if f_last.shape[1] == 1:
            raise ImageNotSupported("temporal localization needs a video input")
        return self.input_proj(f_last.mean(dim=(2, 3)))

    def temporal_enhance(self, f_tmp, q_hat):
        return self.enhance(f_tmp, q_hat)

    def temporal_predict(self, f_hat):
        x = f_hat.transpose(1, 2)
        s_cls = self.conv_cls(x).transpose(1, 2)
        s_reg = F.softplus(self.conv_reg(x)).transpose(1, 2) + REG_FLOOR
        return s_cls, s_reg

    def forward(self, fp: FeaturePyramid, q_hat):
        return self.temporal_predict(self.temporal_enhance(self.temporal_feature(fp.levels[-1]), q_hat))


def interval_tiou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def decode_segments(s_cls, s_reg, feature_stride_seconds, score_threshold=0.1, nms_tiou=0.5,
                    max_keep=100):
    """Turn per-timestep logits (T,) / (T, 1) and offsets (T, 2) into scored segments.

    Candidates at timestep t span ``[t - s_reg[t, 0], t + s_reg[t, 1]]`` grid
    units; hard NMS removes candidates overlapping a kept one at tIoU >= nms_tiou.
    """
    s_cls = np.asarray(s_cls, dtype=np.float64).reshape(-1)
    s_reg = np.asarray(s_reg, dtype=np.float64).reshape(-1, 2)
    t = np.arange(len(s_cls), dtype=np.float64)
    scores = 1.0 / (1.0 + np.exp(-s_cls))
    starts = np.maximum((t - s_reg[:, 0]) * feature_stride_seconds, 0.0)
    ends = (t + s_reg[:, 1]) * feature_stride_seconds
    keep = (scores >= score_threshold) & (ends > starts)
    order = [i for i in np.argsort(-scores, kind="stable") if keep[i]]
    kept = []
    for i in order:
        cand = (starts[i], ends[i])
        if all(interval_tiou(cand, (k.start, k.end)) < nms_tiou for k in kept):
            kept.append(Segment(float(starts[i]), float(ends[i]), float(scores[i])))
            if len(kept) == max_keep:
                break
    return kept
