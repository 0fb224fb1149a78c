"""Experiment configuration with a file < flags override chain."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .data.dataset import BatchSpec, BenchmarkConfig
from .errors import TaskDataMismatch
from .model import IMAGE_TASKS, VIDEO_TASKS, ModelConfig


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0


@dataclass
class DecodeConfig:
    score_threshold: float = 0.1
    nms_tiou: float = 0.5
    max_keep: int = 100


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    data_root: str | None = None
    total_steps: int = 3000
    seed: int = 0
    eval_every: int = 500
    eval_batch_size: int = 32

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, dict):
                setattr(self, f.name, _TYPES[f.name](**value))
        if isinstance(self.optim.betas, list):
            self.optim.betas = tuple(self.optim.betas)

    @property
    def tasks(self):
        return self.model.tasks

    def to_dict(self):
        return asdict(self)

    def effective_batch(self, n_images=None, n_videos=None):
        """Batch spec with modalities zeroed when no requested task needs them."""
        tasks = set(self.tasks)
        need_img = bool(tasks & set(IMAGE_TASKS))
        need_vid = bool(tasks & set(VIDEO_TASKS))
        spec = BatchSpec(self.batch.images_per_batch if need_img else 0,
                         self.batch.videos_per_batch if need_vid else 0,
                         self.batch.frame_count, self.batch.frame_stride)
        if need_img and (spec.images_per_batch == 0 or n_images == 0):
            raise TaskDataMismatch(f"tasks {sorted(tasks & set(IMAGE_TASKS))} need image data")
        if need_vid and (spec.videos_per_batch == 0 or n_videos == 0):
            raise TaskDataMismatch(f"tasks {sorted(tasks & set(VIDEO_TASKS))} need video data")
        return spec


_TYPES = {"model": ModelConfig, "batch": BatchSpec, "optim": OptimConfig,
          "data": BenchmarkConfig, "decode": DecodeConfig}


def load_config(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml
        raw = yaml.safe_load(text)
    else:
        raw = json.loads(text)
    return ExperimentConfig(**raw)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))


def apply_overrides(cfg: ExperimentConfig, overrides):
    """Apply ``dotted.key=value`` strings; values are parsed as JSON when possible."""
    raw = cfg.to_dict()
    for item in overrides or ():
        key, _, value = item.partition("=")
        if not _:
            raise ValueError(f"override {item!r} is not key=value")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise KeyError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {key!r}")
        node[parts[-1]] = parsed
    return ExperimentConfig(**raw)


def replace(cfg, **changes):
    """dataclasses.replace that also accepts nested dicts for sub-configs."""
    raw = cfg.to_dict() if is_dataclass(cfg) else dict(cfg)
    for k, v in changes.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k].update(v)
        else:
            raw[k] = v
    return ExperimentConfig(**raw)
