"""Benchmark splits: generation, on-disk layout, batch sampling and collation.

On-disk layout, one directory per split::

    <root>/manifest.json            # schema version, generator config, split names
    <root>/<split>/pixels.npz       # images, image_masks, videos, video_masks (uint8 / bool)
    <root>/<split>/annotations.jsonl
    <root>/<split>/manifest.json    # sample_ids and their generator seeds

Each annotation line holds the AnnotationRecord fields except the mask, which
lives in ``pixels.npz`` at ``index``. Segment times are seconds from the clip
start, half-open ``[start_s, end_s)`` on frame boundaries.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..encoder import sample_frame_indices, standardize
from ..errors import InsufficientModality
from .augment import augment
from .synth import derive_seed, forge_image, forge_video, gen_real_face, gen_video

SCHEMA_VERSION = 1


@dataclass
class AnnotationRecord:
    sample_id: str
    modality: str
    label: str
    generator_seed: int
    index: int
    segments: list = field(default_factory=list)
    mask_fraction: float = 0.0
    manipulation: str | None = None
    mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def is_fake(self):
        return self.label == "fake"

    def to_record(self):
        row = asdict(self)
        row.pop("mask")
        row["segments"] = [[float(a), float(b)] for a, b in self.segments]
        return row


@dataclass
class BenchmarkConfig:
    n_train_images: int = 2000
    n_train_videos: int = 400
    n_val_images: int = 400
    n_val_videos: int = 100
    image_size: int = 32
    video_frames: int = 32
    fps: float = 8.0
    seed: int = 0

    def split_sizes(self):
        return {"train": (self.n_train_images, self.n_train_videos),
                "val": (self.n_val_images, self.n_val_videos)}


@dataclass
class BatchSpec:
    images_per_batch: int = 16
    videos_per_batch: int = 2
    frame_count: int = 8
    frame_stride: int = 4

    def __post_init__(self):
        if self.images_per_batch < 0 or self.videos_per_batch < 0:
            raise ValueError("batch counts must be nonnegative")
        if self.images_per_batch == 0 and self.videos_per_batch == 0:
            raise ValueError("a batch needs at least one image or one video")


class SplitData:
    def __init__(self, images, image_masks, videos, video_masks, records, fps):
        self.images = images
        self.image_masks = image_masks
        self.videos = videos
        self.video_masks = video_masks
        self.records = records
        self.fps = fps
        self.image_records = [r for r in records if r.modality == "image"]
        self.video_records = [r for r in records if r.modality == "video"]

    @property
    def n_images(self):
        return len(self.image_records)

    @property
    def n_videos(self):
        return len(self.video_records)

    @property
    def image_labels(self):
        return np.array([r.is_fake for r in self.image_records], dtype=np.int64)

    @property
    def video_labels(self):
        return np.array([r.is_fake for r in self.video_records], dtype=np.int64)


def _quantize(x):
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)


def generate_split(n_images, n_videos, seed=0, split="train", size=32, video_frames=32, fps=8.0):
    """Generate a split; sample i is fake when i is odd (exact 50/50 balance)."""
    H = W = size
    images = np.zeros((n_images, H, W, 3), np.uint8)
    image_masks = np.zeros((n_images, H, W), bool)
    videos = np.zeros((n_videos, video_frames, H, W, 3), np.uint8)
    video_masks = np.zeros((n_videos, video_frames, H, W), bool)
    records = []
    for i in range(n_images):
        gseed = derive_seed(seed, split, "image", i)
        img = gen_real_face(gseed, H, W)
        rec = AnnotationRecord(f"{split}-img-{i:05d}", "image", "real", gseed, i)
        if i % 2:
            img, mask, params = forge_image(img, derive_seed(gseed, "forge"))
            image_masks[i] = mask
            rec.label, rec.manipulation, rec.mask_fraction = "fake", params["kind"], float(mask.mean())
        images[i] = _quantize(img)
        rec.mask = image_masks[i]
        records.append(rec)
    for i in range(n_videos):
        gseed = derive_seed(seed, split, "video", i)
        clip = gen_video(gseed, video_frames, fps, H, W)
        rec = AnnotationRecord(f"{split}-vid-{i:05d}", "video", "real", gseed, i)
        if i % 2:
            clip, segments, masks = forge_video(clip, derive_seed(gseed, "forge"), fps)
            video_masks[i] = masks
            rec.label, rec.segments = "fake", segments
            rec.mask_fraction = float(masks.mean())
        videos[i] = _quantize(clip)
        rec.mask = video_masks[i]
        records.append(rec)
    return SplitData(images, image_masks, videos, video_masks, records, fps)


def generate_benchmark(cfg: BenchmarkConfig):
    return {name: generate_split(ni, nv, cfg.seed, name, cfg.image_size, cfg.video_frames, cfg.fps)
            for name, (ni, nv) in cfg.split_sizes().items()}


def save_split(data: SplitData, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(directory / "pixels.npz", images=data.images, image_masks=data.image_masks,
                        videos=data.videos, video_masks=data.video_masks)
    with open(directory / "annotations.jsonl", "w") as fh:
        for rec in data.records:
            fh.write(json.dumps(rec.to_record()) + "\n")
    manifest = {"schema_version": SCHEMA_VERSION, "fps": data.fps,
                "samples": [{"sample_id": r.sample_id, "generator_seed": r.generator_seed}
                            for r in data.records]}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_split(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema {manifest.get('schema_version')}")
    arrays = np.load(directory / "pixels.npz")
    data = dict(arrays)
    records = []
    with open(directory / "annotations.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            row["segments"] = [tuple(s) for s in row["segments"]]
            rec = AnnotationRecord(**row)
            masks = data["image_masks"] if rec.modality == "image" else data["video_masks"]
            rec.mask = masks[rec.index]
            records.append(rec)
    return SplitData(data["images"], data["image_masks"], data["videos"], data["video_masks"],
                     records, manifest["fps"])


def write_benchmark(cfg: BenchmarkConfig, root):
    root = Path(root)
    splits = generate_benchmark(cfg)
    for name, data in splits.items():
        save_split(data, root / name)
    (root / "manifest.json").write_text(json.dumps(
        {"schema_version": SCHEMA_VERSION, "config": asdict(cfg), "splits": list(splits)}, indent=1))
    return splits


def load_benchmark(root):
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    return {name: load_split(root / name) for name in manifest["splits"]}


def mixed_batch_sampler(data: SplitData, spec: BatchSpec, rng):
    """Endless stream of (image indices, video indices), uniform with replacement."""
    rng = np.random.default_rng(rng)
    if spec.images_per_batch and data.n_images == 0:
        raise InsufficientModality("batch spec asks for images but the split has none")
    if spec.videos_per_batch and data.n_videos == 0:
        raise InsufficientModality("batch spec asks for videos but the split has none")
    while True:
        yield (rng.integers(0, data.n_images, spec.images_per_batch) if spec.images_per_batch
               else np.zeros(0, np.int64),
               rng.integers(0, data.n_videos, spec.videos_per_batch) if spec.videos_per_batch
               else np.zeros(0, np.int64))


def clip_start(n_frames, spec: BatchSpec, rng=None):
    """Random start during training, centered clip when ``rng`` is None."""
    span = (spec.frame_count - 1) * spec.frame_stride + 1
    slack = max(0, n_frames - span)
    return int(rng.integers(0, slack + 1)) if rng is not None else slack // 2


def grid_segments(segments, fps, start, spec: BatchSpec, temporal_patch, n_frames, frame_flags):
    """Map second-based segments to (start, end) in units of final-level positions.

    Segments without any sampled position are dropped. Wrapped (loop-padded)
    clips fall back to runs of forged sampled frames.
    """
    T_grid = -(-spec.frame_count // temporal_patch)
    span = (spec.frame_count - 1) * spec.frame_stride + 1
    out = []
    if span > n_frames:
        t, flags = 0, list(frame_flags)
        while t < len(flags):
            if flags[t]:
                u = t
                while u < len(flags) and flags[u]:
                    u += 1
                out.append((t / temporal_patch, min(u / temporal_patch, T_grid)))
                t = u
            else:
                t += 1
        return out
    for a, b in segments:
        # a sampled frame sits at its centre time, so a half-open segment never claims the next frame
        g0 = (a * fps - start - 0.5) / spec.frame_stride / temporal_patch
        g1 = (b * fps - start - 0.5) / spec.frame_stride / temporal_patch
        lo, hi = max(g0, 0.0), min(g1, float(T_grid))
        if np.ceil(lo) <= min(hi, T_grid - 1) and hi > lo:
            out.append((lo, hi))
    return out


def make_batch(data: SplitData, image_idx, video_idx, spec: BatchSpec, rng=None, train=True,
               temporal_patch=1, dtype=torch.float32):
    """Collate sampled indices into standardized tensors and targets.

    With ``train=True`` the augmentation and random clip offsets draw from
    ``rng``; evaluation uses centered clips and no augmentation.
    """
    batch = {"image_ids": [data.image_records[i].sample_id for i in image_idx],
             "video_ids": [data.video_records[i].sample_id for i in video_idx]}
    if len(image_idx):
        pix, masks = [], []
        for i in image_idx:
            p = data.images[i][None].astype(np.float64) / 255.0
            m = data.image_masks[i][None]
            if train:
                p, m = augment(p, m, rng)
            pix.append(standardize(p))
            masks.append(m[0])
        batch["images"] = torch.as_tensor(np.stack(pix), dtype=dtype)
        batch["image_masks"] = torch.as_tensor(np.stack(masks), dtype=dtype)
        batch["image_labels"] = torch.as_tensor(data.image_labels[image_idx], dtype=dtype)
    if len(video_idx):
        clips, segs, segs_s = [], [], []
        sec_per_unit = spec.frame_stride * temporal_patch / data.fps
        for i in video_idx:
            rec = data.video_records[i]
            n_frames = data.videos.shape[1]
            start = clip_start(n_frames, spec, rng if train else None)
            idx = sample_frame_indices(n_frames, spec.frame_count, spec.frame_stride, start)
            p = data.videos[i][idx].astype(np.float64) / 255.0
            m = data.video_masks[i][idx]
            if train:
                p, m = augment(p, m, rng)
            clips.append(standardize(p))
            g = grid_segments(rec.segments, data.fps, start, spec, temporal_patch, n_frames,
                              data.video_masks[i][idx].any(axis=(1, 2)))
            segs.append(g)
            segs_s.append([(a * sec_per_unit, b * sec_per_unit) for a, b in g])
        batch["videos"] = torch.as_tensor(np.stack(clips), dtype=dtype)
        batch["video_labels"] = torch.as_tensor(data.video_labels[video_idx], dtype=dtype)
        batch["video_segments"] = segs
        batch["video_segments_s"] = segs_s
        batch["seconds_per_position"] = sec_per_unit
    return batch


def pixel_difference_oracle(data: SplitData, threshold=2.0 / 255):
    """Benchmark sanity check that forgeries are detectable in principle.

    Regenerates each pristine sample from its generator seed and calls a
    sample fake when the largest pixel deviation exceeds ``threshold``.
    Returns the accuracy over all samples.
    """
    correct = 0
    for rec in data.records:
        if rec.modality == "image":
            H, W = data.images.shape[1:3]
            clean = _quantize(gen_real_face(rec.generator_seed, H, W)).astype(np.float64)
            x = data.images[rec.index].astype(np.float64)
        else:
            F_, H, W = data.videos.shape[1:4]
            clean = _quantize(gen_video(rec.generator_seed, F_, data.fps, H, W)).astype(np.float64)
            x = data.videos[rec.index].astype(np.float64)
        predicted_fake = np.abs(x - clean).max() / 255.0 > threshold
        correct += predicted_fake == rec.is_fake
    return correct / len(data.records)
