"""Unified image/video encoder.

Images are treated as one-frame videos: both modalities go through the same
patch embedding, the same shifted-window transformer stages and therefore the
same parameters. The output is a pyramid of channels-last feature maps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptySource, NonDivisibleResolution, ShapeMismatch

NORM_MEAN = (0.5, 0.5, 0.5)
NORM_STD = (0.5, 0.5, 0.5)


@dataclass
class EncoderConfig:
    input_size: tuple[int, int] = (32, 32)
    max_frames: int = 32
    patch_size: tuple[int, int, int] = (1, 4, 4)
    stage_depths: tuple[int, ...] = (2, 2, 2, 2)
    stage_dims: tuple[int, ...] = (24, 48, 96, 192)
    num_heads: tuple[int, ...] = (2, 2, 2, 2)
    window_size: tuple[int, int, int] = (2, 4, 4)
    # one flag per stage transition; Video-Swin style merging keeps time intact
    temporal_downsample: tuple[bool, ...] = (False, False, False)
    mlp_ratio: float = 4.0
    positional_encoding: str = "learned-spatial+learned-temporal"

    def __post_init__(self):
        for name in ("input_size", "patch_size", "stage_depths", "stage_dims",
                     "num_heads", "window_size", "temporal_downsample"):
            setattr(self, name, tuple(getattr(self, name)))
        L = len(self.stage_dims)
        if L < 2:
            raise ValueError("encoder needs at least two stages")
        if len(self.stage_depths) != L or len(self.num_heads) != L:
            raise ValueError("stage_depths, stage_dims and num_heads must have equal length")
        if len(self.temporal_downsample) != L - 1:
            raise ValueError("temporal_downsample needs one entry per stage transition")
        if any(b < a for a, b in zip(self.stage_dims, self.stage_dims[1:])):
            raise ValueError("stage_dims must be nondecreasing")
        if any(w < 1 for w in self.window_size):
            raise ValueError("window dims must be >= 1")
        for d, h in zip(self.stage_dims, self.num_heads):
            if d % h:
                raise ValueError(f"stage dim {d} not divisible by {h} heads")
        if self.input_size[0] % self.patch_size[1] or self.input_size[1] % self.patch_size[2]:
            raise NonDivisibleResolution(
                f"input size {self.input_size} not divisible by patch {self.patch_size[1:]}")

    @property
    def num_levels(self):
        return len(self.stage_dims)


@dataclass
class MediaTensor:
    """A T x H x W x 3 standardized array; images have T == 1."""

    data: np.ndarray
    modality_tag: str = "image"
    fps: float | None = None
    frame_stride: int = 1
    frame_indices: tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[-1] != 3:
            raise ShapeMismatch(f"expected T x H x W x 3, got {self.data.shape}")
        if self.modality_tag not in ("image", "video"):
            raise ValueError(f"unknown modality {self.modality_tag!r}")
        if self.modality_tag == "image" and self.data.shape[0] != 1:
            raise ShapeMismatch("image MediaTensor must have T == 1")
        if not np.isfinite(self.data).all():
            raise ValueError("MediaTensor contains NaN/Inf")

    @property
    def shape(self):
        return self.data.shape

    def as_batch(self, dtype=torch.float32):
        return torch.as_tensor(self.data, dtype=dtype).unsqueeze(0)


def sample_frame_indices(clip_length, frame_count, stride, start=0):
    """Indices ``start, start+stride, ...`` wrapped modulo the clip length."""
    if clip_length < 1:
        raise EmptySource("empty clip")
    return (start + np.arange(frame_count) * stride) % clip_length


def standardize(pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype == np.uint8:
        pixels = pixels.astype(np.float32) / 255.0
    pixels = pixels.astype(np.float32)
    return (pixels - np.asarray(NORM_MEAN, np.float32)) / np.asarray(NORM_STD, np.float32)


def to_unified_tensor(source, frame_count=None, stride=1, start=0, fps=None,
                      patch_size=(1, 4, 4)):
    """Convert an H x W x 3 image or F x H x W x 3 clip into a MediaTensor.

    Pixel values may be uint8 or floats in [0, 1]. Videos are sampled at
    ``frame_count`` frames with the given stride; spans longer than the clip
    wrap around (loop padding).
    """
    source = np.asarray(source)
    if source.size == 0:
        raise EmptySource("source has no pixels")
    if source.ndim == 3:
        frames, modality, idx = source[None], "image", np.array([0])
    elif source.ndim == 4:
        if frame_count is None:
            frame_count = source.shape[0]
        idx = sample_frame_indices(source.shape[0], frame_count, stride, start)
        frames, modality = source[idx], "video"
    else:
        raise ShapeMismatch(f"cannot interpret source of shape {source.shape}")
    H, W = frames.shape[1:3]
    if H % patch_size[1] or W % patch_size[2]:
        raise NonDivisibleResolution(f"{H}x{W} not divisible by patch {patch_size[1:]}")
    return MediaTensor(standardize(frames), modality, fps if modality == "video" else None,
                       int(stride) if modality == "video" else 1, tuple(int(i) for i in idx))


@dataclass
class FeaturePyramid:
    levels: list  # each (B, T_l, H_l, W_l, C_l)
    strides: list  # (temporal, spatial) downsampling factor w.r.t. input per level

    def __len__(self):
        return len(self.levels)

    def shapes(self):
        return [tuple(f.shape[1:]) for f in self.levels]


def attention(q, k, v, mask=None):
    """Scaled dot-product attention returning both output and weights.

    q: (..., Nq, d), k/v: (..., Nk, d); mask is additive and broadcastable to
    (..., Nq, Nk).
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        scores = scores + mask
    weights = scores.softmax(dim=-1)
    return weights @ v, weights


class PatchEmbed(nn.Module):
    """Shared affine map over non-overlapping 3D patches plus positional tables."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.patch_size = cfg.patch_size
        dim = cfg.stage_dims[0]
        self.proj = nn.Conv3d(3, dim, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        grid_h = cfg.input_size[0] // cfg.patch_size[1]
        grid_w = cfg.input_size[1] // cfg.patch_size[2]
        max_t = math.ceil(cfg.max_frames / cfg.patch_size[0])
        self.pos_spatial = nn.Parameter(torch.zeros(grid_h, grid_w, dim))
        self.pos_temporal = nn.Parameter(torch.zeros(max_t, dim))
        nn.init.trunc_normal_(self.pos_spatial, std=0.02)
        nn.init.trunc_normal_(self.pos_temporal, std=0.02)

    def forward(self, x):
        # x: (B, T, H, W, 3)
        B, T, H, W, _ = x.shape
        tp, hp, wp = self.patch_size
        if H % hp or W % wp:
            raise ShapeMismatch(f"{H}x{W} not divisible by patch {(hp, wp)}")
        x = x.permute(0, 4, 1, 2, 3)
        pad_t = (-T) % tp
        if pad_t:
            x = F.pad(x, (0, 0, 0, 0, 0, pad_t))
        x = self.proj(x).permute(0, 2, 3, 4, 1)  # B, T', H', W', C
        Tg, Hg, Wg = x.shape[1:4]
        if (Hg, Wg) != tuple(self.pos_spatial.shape[:2]):
            raise ShapeMismatch(
                f"token grid {Hg}x{Wg} does not match positional table "
                f"{tuple(self.pos_spatial.shape[:2])}")
        if Tg > self.pos_temporal.shape[0]:
            raise ShapeMismatch(f"{Tg} temporal tokens exceed table of {self.pos_temporal.shape[0]}")
        return x + self.pos_spatial[None, None] + self.pos_temporal[:Tg, None, None][None]


def effective_window(grid, window, shift):
    """Clamp window (and drop shift) along dims where the grid is not larger than the window."""
    w_eff, s_eff = [], []
    for g, w, s in zip(grid, window, shift):
        if g <= w:
            w_eff.append(g)
            s_eff.append(0)
        else:
            w_eff.append(w)
            s_eff.append(s)
    return tuple(w_eff), tuple(s_eff)


def window_partition(x, window):
    B, T, H, W, C = x.shape
    wt, wh, ww = window
    x = x.view(B, T // wt, wt, H // wh, wh, W // ww, ww, C)
    return x.permute(0, 1, 3, 5, 2, 4, 6, 7).reshape(-1, wt * wh * ww, C)


def window_reverse(windows, window, B, T, H, W):
    wt, wh, ww = window
    x = windows.view(B, T // wt, H // wh, W // ww, wt, wh, ww, -1)
    return x.permute(0, 1, 4, 2, 5, 3, 6, 7).reshape(B, T, H, W, -1)


def shifted_window_mask(padded, window, shift, dtype, device):
    """Additive mask keeping cyclically shifted windows from mixing distant regions."""
    ids = []
    for size, w, s in zip(padded, window, shift):
        region = torch.zeros(size, dtype=torch.long, device=device)
        if s:
            region[size - w:size - s] = 1
            region[size - s:] = 2
        ids.append(region)
    label = ids[0][:, None, None] * 9 + ids[1][None, :, None] * 3 + ids[2][None, None, :]
    label = window_partition(label[None, ..., None], window).squeeze(-1)  # nW, N
    same = label[:, :, None] == label[:, None, :]
    mask = torch.zeros(same.shape, dtype=dtype, device=device)
    return mask.masked_fill(~same, float("-inf"))


class WindowAttention(nn.Module):
    """Multi-head self-attention inside (nW*B, N, C) windows."""

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, mask=None, return_weights=False):
        Bw, N, C = x.shape
        qkv = self.qkv(x).view(Bw, N, 3, self.heads, C // self.heads).permute(2, 0, 3, 1, 4)
        if mask is not None:
            nW = mask.shape[0]
            mask = mask.view(1, nW, 1, N, N).expand(Bw // nW, -1, -1, -1, -1).reshape(Bw, 1, N, N)
        out, weights = attention(qkv[0], qkv[1], qkv[2], mask)
        out = self.proj(out.transpose(1, 2).reshape(Bw, N, C))
        return (out, weights) if return_weights else out


class SwinBlock(nn.Module):
    def __init__(self, dim, heads, window, shift, mlp_ratio=4.0):
        super().__init__()
        self.window = tuple(window)
        self.shift = tuple(shift)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def window_attend(self, x):
        B, T, H, W, C = x.shape
        window, shift = effective_window((T, H, W), self.window, self.shift)
        pads = [(-s) % w for s, w in zip((T, H, W), window)]
        if any(pads):
            x = F.pad(x, (0, 0, 0, pads[2], 0, pads[1], 0, pads[0]))
        Tp, Hp, Wp = x.shape[1:4]
        mask = None
        if any(shift):
            x = torch.roll(x, shifts=tuple(-s for s in shift), dims=(1, 2, 3))
            mask = shifted_window_mask((Tp, Hp, Wp), window, shift, x.dtype, x.device)
        out = self.attn(window_partition(x, window), mask)
        out = window_reverse(out, window, B, Tp, Hp, Wp)
        if any(shift):
            out = torch.roll(out, shifts=shift, dims=(1, 2, 3))
        return out[:, :T, :H, :W].contiguous()

    def forward(self, x):
        x = x + self.window_attend(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class PatchMerging(nn.Module):
    """Halve H and W (floor, never below 1) and optionally T, then widen channels."""

    def __init__(self, dim, out_dim, temporal):
        super().__init__()
        self.temporal = temporal
        factor = 8 if temporal else 4
        self.norm = nn.LayerNorm(factor * dim)
        self.reduction = nn.Linear(factor * dim, out_dim, bias=False)

    def forward(self, x):
        # odd sizes are floored; a size-1 dim is zero-padded to 2 so it stays 1
        B, T, H, W, C = x.shape
        st = 2 if self.temporal else 1
        x = x[:, :max(T - T % st, 1), :max(H - H % 2, 1), :max(W - W % 2, 1)]
        pads = [2 - x.shape[1] if (st == 2 and x.shape[1] == 1) else 0,
                1 if x.shape[2] == 1 else 0, 1 if x.shape[3] == 1 else 0]
        if any(pads):
            x = F.pad(x, (0, 0, 0, pads[2], 0, pads[1], 0, pads[0]))
        Tn, Hn, Wn = x.shape[1] // st, x.shape[2] // 2, x.shape[3] // 2
        x = x.reshape(B, Tn, st, Hn, 2, Wn, 2, C).permute(0, 1, 3, 5, 2, 4, 6, 7)
        x = x.reshape(B, Tn, Hn, Wn, st * 4 * C)
        return self.reduction(self.norm(x)), (st, 2)


class UnifiedEncoder(nn.Module):
    """Patch embedding followed by L shifted-window stages; one parameter set for all modalities."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg)
        self.stages = nn.ModuleList()
        self.norms = nn.ModuleList()
        self.merges = nn.ModuleList()
        window = cfg.window_size
        half = tuple(w // 2 for w in window)
        for i, (depth, dim, heads) in enumerate(zip(cfg.stage_depths, cfg.stage_dims, cfg.num_heads)):
            blocks = [SwinBlock(dim, heads, window, (0, 0, 0) if j % 2 == 0 else half, cfg.mlp_ratio)
                      for j in range(depth)]
            self.stages.append(nn.Sequential(*blocks))
            self.norms.append(nn.LayerNorm(dim))
            if i + 1 < cfg.num_levels:
                self.merges.append(PatchMerging(dim, cfg.stage_dims[i + 1], cfg.temporal_downsample[i]))
        self.apply(_init_weights)

    def forward(self, x):
        """x: (B, T, H, W, 3) standardized pixels -> FeaturePyramid."""
        if x.ndim != 5 or x.shape[-1] != 3:
            raise ShapeMismatch(f"expected (B, T, H, W, 3), got {tuple(x.shape)}")
        tokens = self.patch_embed(x)
        t_stride, s_stride = self.cfg.patch_size[0], self.cfg.patch_size[1]
        levels, strides = [], []
        for i, stage in enumerate(self.stages):
            tokens = stage(tokens)
            levels.append(self.norms[i](tokens))
            strides.append((t_stride, s_stride))
            if i < len(self.merges):
                tokens, (st, ss) = self.merges[i](tokens)
                t_stride, s_stride = t_stride * st, s_stride * ss
        return FeaturePyramid(levels, strides)


def _init_weights(m):
    if isinstance(m, nn.Linear):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)


def encode(encoder: UnifiedEncoder, x: MediaTensor):
    """Encode a single MediaTensor; returns a FeaturePyramid with batch size 1."""
    dtype = next(encoder.parameters()).dtype
    return encoder(x.as_batch(dtype))
