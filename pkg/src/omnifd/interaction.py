"""Cross-task interaction: shared learnable queries refined against the feature pyramid."""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .encoder import FeaturePyramid, attention
from .errors import LevelOutOfRange, WidthMismatch


@dataclass
class InteractionConfig:
    num_queries: int = 64
    dim: int | None = None  # defaults to the last encoder stage width
    depth: int = 3
    heads: int = 4
    ffn_expansion: int = 4

    def resolved(self, encoder_dims):
        dim = self.dim if self.dim is not None else encoder_dims[-1]
        if self.depth < 1 or self.num_queries < 1:
            raise ValueError("depth and num_queries must be >= 1")
        if dim % self.heads:
            raise ValueError(f"interaction width {dim} not divisible by {self.heads} heads")
        return InteractionConfig(self.num_queries, dim, self.depth, self.heads, self.ffn_expansion)


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (B, M, C)
    provenance: torch.Tensor  # (M, 4) rows of (level, t, h, w)
    level_shapes: list  # (T_l, H_l, W_l) per level


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, x):
        B, N, C = x.shape
        return x.view(B, N, self.heads, C // self.heads).transpose(1, 2)

    def forward(self, query, key, value):
        """Returns the attended output (B, Nq, C) and per-head weights (B, h, Nq, Nk)."""
        out, weights = attention(self._split(self.q(query)), self._split(self.k(key)),
                                 self._split(self.v(value)))
        B, _, Nq, _ = out.shape
        return self.out(out.transpose(1, 2).reshape(B, Nq, -1)), weights


class InteractionLayer(nn.Module):
    """Post-norm block whose keys/values are the queries concatenated with the context.

    Also used by the temporal head, where the temporal features are the query
    and the refined queries are the context.
    """

    def __init__(self, dim, heads, ffn_expansion=4):
        super().__init__()
        self.dim = dim
        self.attn = MultiHeadAttention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_expansion * dim), nn.GELU(),
                                 nn.Linear(ffn_expansion * dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, q, context, return_weights=False):
        if q.shape[-1] != self.dim or context.shape[-1] != self.dim:
            raise WidthMismatch(
                f"layer width {self.dim}, got query {q.shape[-1]} and context {context.shape[-1]}")
        kv = torch.cat([q, context], dim=1)
        attended, weights = self.attn(q, kv, kv)
        q = self.norm1(q + attended)
        q = self.norm2(q + self.ffn(q))
        return (q, weights) if return_weights else q


class CrossTaskInteraction(nn.Module):
    def __init__(self, cfg: InteractionConfig, level_dims):
        super().__init__()
        self.cfg = cfg
        C = cfg.dim
        self.queries = nn.Parameter(torch.randn(cfg.num_queries, C) * 0.02)
        self.level_proj = nn.ModuleList(nn.Linear(d, C) for d in level_dims)
        self.level_embed = nn.Parameter(torch.randn(len(level_dims), C) * 0.02)
        self.layers = nn.ModuleList(
            InteractionLayer(C, cfg.heads, cfg.ffn_expansion) for _ in range(cfg.depth))

    def flatten_pyramid(self, fp: FeaturePyramid) -> TokenSequence:
        chunks, prov, shapes = [], [], []
        for lvl, (feat, proj) in enumerate(zip(fp.levels, self.level_proj)):
            B, T, H, W, _ = feat.shape
            chunks.append((proj(feat) + self.level_embed[lvl]).reshape(B, T * H * W, -1))
            t, h, w = torch.meshgrid(torch.arange(T), torch.arange(H), torch.arange(W), indexing="ij")
            prov.append(torch.stack([torch.full_like(t, lvl), t, h, w], -1).reshape(-1, 4))
            shapes.append((T, H, W))
        return TokenSequence(torch.cat(chunks, 1), torch.cat(prov, 0), shapes)

    def refine(self, feats: TokenSequence, return_weights=False):
        B = feats.tokens.shape[0]
        q = self.queries.unsqueeze(0).expand(B, -1, -1)
        weights = None
        for layer in self.layers:
            q, weights = layer(q, feats.tokens, return_weights=True)
        return (q, weights) if return_weights else q

    def forward(self, fp: FeaturePyramid, return_weights=False):
        return self.refine(self.flatten_pyramid(fp), return_weights)


def attention_maps(weights, feats: TokenSequence, level, num_queries):
    """Per-query attention mass on one pyramid level, as (B, N, H_l, W_l) grids.

    ``weights`` are final-layer attention probabilities (B, heads, N, N + M);
    heads are averaged and videos are averaged over the level's time axis.
    """
    if not 0 <= level < len(feats.level_shapes):
        raise LevelOutOfRange(f"level {level} not in [0, {len(feats.level_shapes)})")
    w = weights.mean(dim=1)[..., num_queries:]  # drop the query-to-query columns
    T, H, W = feats.level_shapes[level]
    cols = (feats.provenance[:, 0] == level).nonzero().squeeze(1)
    grid = w[..., cols].reshape(w.shape[0], w.shape[1], T, H, W)
    return grid.mean(dim=2)
