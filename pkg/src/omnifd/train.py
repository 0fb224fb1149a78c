"""Multi-task training loop and checkpoints."""
from __future__ import annotations

import io
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, save_config
from .data.dataset import generate_benchmark, load_benchmark, make_batch
from .data.synth import derive_seed
from .errors import NonFiniteLoss
from .evaluate import evaluate, primary_score, write_reports
from .losses import loss_binary, loss_spatial, loss_temporal, total_loss
from .model import build_model

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


def compute_losses(model, batch):
    """Forward each modality sub-batch once and sum the present task losses."""
    comps = {}
    if "images" in batch:
        out = model.forward_image(batch["images"])
        fake = batch["image_labels"] > 0.5
        if "image_logit" in out:
            comps["l_img"] = loss_binary(out["image_logit"], batch["image_labels"])
        if "spatial_mask" in out:
            comps["l_sp"] = loss_spatial(out["spatial_mask"], batch["image_masks"], fake)
    if "videos" in batch:
        out = model.forward_video(batch["videos"])
        fake = batch["video_labels"] > 0.5
        if "video_logit" in out:
            comps["l_vid"] = loss_binary(out["video_logit"], batch["video_labels"])
        if "temporal_cls" in out:
            comps["l_tmp"] = loss_temporal(out["temporal_cls"], out["temporal_reg"],
                                           batch["video_segments"], fake)
    return total_loss(comps)


def cosine_lambda(total_steps):
    return lambda step: 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class Trainer:
    """Owns model, optimizer, schedule and the data RNG; ``step()`` advances one update."""

    def __init__(self, cfg: ExperimentConfig, data, dtype=torch.float32):
        self.cfg = cfg
        self.data = data
        self.dtype = dtype
        train = data["train"]
        self.spec = cfg.effective_batch(train.n_images, train.n_videos)
        self.model = build_model(cfg.model, cfg.seed, dtype)
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=cfg.optim.lr,
                                           weight_decay=cfg.optim.weight_decay,
                                           betas=tuple(cfg.optim.betas))
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer,
                                                           cosine_lambda(cfg.total_steps))
        self.data_rng = np.random.default_rng(derive_seed(cfg.seed, "data"))
        self.step_count = 0
        self.log = []

    def draw_batch(self):
        train = self.data["train"]
        img = self.data_rng.integers(0, train.n_images, self.spec.images_per_batch) \
            if self.spec.images_per_batch else []
        vid = self.data_rng.integers(0, train.n_videos, self.spec.videos_per_batch) \
            if self.spec.videos_per_batch else []
        return make_batch(train, img, vid, self.spec, self.data_rng, train=True,
                          temporal_patch=self.model.temporal_stride(), dtype=self.dtype)

    def step(self):
        self.model.train()
        batch = self.draw_batch()
        report = compute_losses(self.model, batch)
        row = {"step": self.step_count, "lr": self.scheduler.get_last_lr()[0], **report.as_floats()}
        if not torch.isfinite(report.total):
            raise NonFiniteLoss(f"non-finite loss at step {self.step_count}: {json.dumps(row)}")
        self.optimizer.zero_grad(set_to_none=True)
        # an all-real batch for localization-only tasks has a constant loss and nothing to learn
        if report.total.requires_grad:
            report.total.backward()
        if self.cfg.optim.grad_clip:
            row["grad_norm"] = float(torch.nn.utils.clip_grad_norm_(self.model.parameters(),
                                                                    self.cfg.optim.grad_clip))
        self.optimizer.step()
        self.scheduler.step()
        self.step_count += 1
        self.log.append(row)
        return row

    def evaluate(self, split="val", out_dir=None, write_mask_images=False):
        return evaluate(self.model, self.data[split], self.spec, self.model.tasks, self.cfg.decode,
                        out_dir, self.cfg.eval_batch_size, write_mask_images)

    def state_dict(self):
        return {
            "format_version": CHECKPOINT_VERSION,
            "step": self.step_count,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "config": self.cfg.to_dict(),
            "rng": {"torch": torch.get_rng_state(), "numpy": self.data_rng.bit_generator.state},
        }

    def load_state_dict(self, state):
        if state["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {state['format_version']}")
        self.model.load_state_dict(state["model"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.scheduler.load_state_dict(state["scheduler"])
        torch.set_rng_state(state["rng"]["torch"])
        self.data_rng.bit_generator.state = state["rng"]["numpy"]
        self.step_count = state["step"]


def checkpoint_bytes(state):
    buf = io.BytesIO()
    torch.save(state, buf)
    return buf.getvalue()


def save_checkpoint(state, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(checkpoint_bytes(state))


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)


def model_from_checkpoint(state, dtype=torch.float32):
    cfg = ExperimentConfig(**state["config"])
    model = build_model(cfg.model, cfg.seed, dtype)
    model.load_state_dict(state["model"])
    model.eval()
    return model, cfg


def load_data(cfg: ExperimentConfig):
    if cfg.data_root and (Path(cfg.data_root) / "manifest.json").exists():
        return load_benchmark(cfg.data_root)
    return generate_benchmark(cfg.data)


def train(cfg: ExperimentConfig, data=None, run_dir=None, resume=None, steps=None, evaluate_at_end=True):
    """Train for ``cfg.total_steps`` (or ``steps`` more updates); returns the Trainer.

    With a ``run_dir`` the config is echoed, the per-step loss log is appended
    to ``train_log.jsonl``, validation reports are written at the eval
    cadence and ``last.pt`` / ``best.pt`` checkpoints are kept.
    """
    data = data if data is not None else load_data(cfg)
    trainer = Trainer(cfg, data)
    if resume is not None:
        trainer.load_state_dict(resume if isinstance(resume, dict) else load_checkpoint(resume))
    run_dir = Path(run_dir) if run_dir else None
    log_fh = None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, run_dir / "config.json")
        log_fh = open(run_dir / "train_log.jsonl", "a")
    end = cfg.total_steps if steps is None else min(cfg.total_steps, trainer.step_count + steps)
    best = -math.inf
    try:
        while trainer.step_count < end:
            row = trainer.step()
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
            if trainer.step_count % 100 == 0:
                log.info("step %d loss %.4f", trainer.step_count, row["total"])
            if run_dir and cfg.eval_every and trainer.step_count % cfg.eval_every == 0 \
                    and trainer.step_count < cfg.total_steps:
                reports = trainer.evaluate()
                write_reports(run_dir / "evals", reports, f"step{trainer.step_count:06d}")
                score = primary_score(reports)
                if score > best:
                    best = score
                    save_checkpoint(trainer.state_dict(), run_dir / "best.pt")
    finally:
        if log_fh:
            log_fh.close()
    if run_dir:
        save_checkpoint(trainer.state_dict(), run_dir / "last.pt")
        if evaluate_at_end and "val" in data:
            reports = trainer.evaluate(out_dir=run_dir / "final_eval")
            if primary_score(reports) > best:
                save_checkpoint(trainer.state_dict(), run_dir / "best.pt")
    return trainer
