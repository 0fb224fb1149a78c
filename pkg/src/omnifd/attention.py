"""Export per-query attention heatmaps over the finest pyramid level."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data.dataset import BatchSpec, SplitData, make_batch
from .interaction import attention_maps


@torch.no_grad()
def query_heatmaps(model, x, level=0):
    """(B, N, H, W) attention of every query on one level, bilinearly upsampled to the input size.

    Also returns the raw level grids and each query's total mass on that level.
    """
    model.eval()
    fp = model.encoder(x)
    seq = model.interaction.flatten_pyramid(fp)
    _, weights = model.interaction.refine(seq, return_weights=True)
    grid = attention_maps(weights, seq, level, model.interaction.cfg.num_queries)
    mass = grid.sum(dim=(-1, -2))
    up = F.interpolate(grid, size=tuple(x.shape[2:4]), mode="bilinear", align_corners=False)
    # bilinear weights are convex, so values stay nonnegative; clamp guards rounding
    return up.clamp(min=0), grid, mass


def export_attention(model, data: SplitData, sample_ids, out_dir, queries=(0,), level=0,
                     spec: BatchSpec | None = None):
    """Write heatmap arrays, overlay PNGs and a metadata JSON for the chosen samples and queries."""
    from .plots import plot_attention_overlay

    spec = spec or BatchSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = next(model.parameters()).dtype
    by_id = {r.sample_id: r for r in data.records}
    meta = []
    for sid in sample_ids:
        if sid not in by_id:
            raise KeyError(f"unknown sample id {sid!r}")
        rec = by_id[sid]
        if rec.modality == "image":
            batch = make_batch(data, [rec.index], [], spec, train=False, dtype=dtype)
            x = batch["images"]
        else:
            batch = make_batch(data, [], [rec.index], spec, train=False,
                               temporal_patch=model.temporal_stride(), dtype=dtype)
            x = batch["videos"]
        heat, _, mass = query_heatmaps(model, x, level)
        frame = ((x[0, x.shape[1] // 2].double().numpy() * 0.5) + 0.5).clip(0, 1)
        for q in queries:
            if not 0 <= q < heat.shape[1]:
                raise IndexError(f"query {q} out of range [0, {heat.shape[1]})")
            h = heat[0, q].double().numpy()
            stem = f"{sid}_q{q:03d}"
            np.save(out_dir / f"{stem}.npy", h)
            plot_attention_overlay(frame, h, out_dir / f"{stem}.png", title=f"{sid} query {q}")
            meta.append({"sample_id": sid, "modality": rec.modality, "label": rec.label,
                         "query": int(q), "level": int(level), "attention_mass": float(mass[0, q]),
                         "heatmap": f"{stem}.npy", "overlay": f"{stem}.png", "shape": list(h.shape)})
    (out_dir / "attention_meta.json").write_text(json.dumps(meta, indent=1))
    return meta
