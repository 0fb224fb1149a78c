"""The unified model: one encoder, one interaction module, up to four heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .encoder import EncoderConfig, UnifiedEncoder
from .errors import MissingHead
from .heads import ClassificationHead, SpatialHead, TemporalHead
from .interaction import CrossTaskInteraction, InteractionConfig

TASKS = ("video_cls", "temporal_loc", "image_cls", "spatial_loc")
IMAGE_TASKS = ("image_cls", "spatial_loc")
VIDEO_TASKS = ("video_cls", "temporal_loc")
TASK_LABELS = {"video_cls": "Video", "temporal_loc": "Temporal",
               "image_cls": "Image", "spatial_loc": "Spatial"}


def parse_tasks(spec):
    """Accept 'all', 'Video+Image', ['image_cls', ...] and similar spellings."""
    if isinstance(spec, str):
        if spec.strip().lower() in ("all", "all tasks"):
            return TASKS
        spec = [s for s in spec.replace(",", "+").split("+")]
    lookup = {t: t for t in TASKS}
    lookup.update({v.lower(): k for k, v in TASK_LABELS.items()})
    out = []
    for s in spec:
        key = s.strip().lower()
        if key not in lookup:
            raise ValueError(f"unknown task {s!r}; expected one of {list(TASK_LABELS.values())}")
        out.append(lookup[key])
    if not out:
        raise ValueError("task set is empty")
    return tuple(t for t in TASKS if t in out)


def task_set_label(tasks):
    tasks = parse_tasks(tasks)
    if set(tasks) == set(TASKS):
        return "All"
    return "+".join(TASK_LABELS[t] for t in tasks)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)
    tasks: tuple = TASKS
    temporal_kernel: int = 3

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.interaction, dict):
            self.interaction = InteractionConfig(**self.interaction)
        self.tasks = parse_tasks(self.tasks)

    def to_dict(self):
        return asdict(self)


class OmniFD(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoder
        icfg = cfg.interaction.resolved(enc.stage_dims)
        self.encoder = UnifiedEncoder(enc)
        self.interaction = CrossTaskInteraction(icfg, enc.stage_dims)
        C, N = icfg.dim, icfg.num_queries
        heads = {}
        if "image_cls" in cfg.tasks:
            heads["image_cls"] = ClassificationHead(C)
        if "video_cls" in cfg.tasks:
            heads["video_cls"] = ClassificationHead(C)
        if "spatial_loc" in cfg.tasks:
            heads["spatial_loc"] = SpatialHead(enc.stage_dims, C, N)
        if "temporal_loc" in cfg.tasks:
            heads["temporal_loc"] = TemporalHead(enc.stage_dims[-1], C, icfg.heads,
                                                 icfg.ffn_expansion, cfg.temporal_kernel)
        self.heads = nn.ModuleDict(heads)

    @property
    def tasks(self):
        return tuple(self.heads.keys())

    def require(self, tasks):
        missing = [t for t in tasks if t not in self.heads]
        if missing:
            raise MissingHead(f"model has no head for {missing}; available: {list(self.heads)}")

    def _trunk(self, x, return_attention):
        fp = self.encoder(x)
        out = self.interaction(fp, return_weights=return_attention)
        q_hat, weights = out if return_attention else (out, None)
        return fp, q_hat, weights

    def forward_image(self, x, return_attention=False):
        """x: (B, 1, H, W, 3). One encoder pass feeds every image head."""
        fp, q_hat, weights = self._trunk(x, return_attention)
        out = {}
        if "image_cls" in self.heads:
            out["image_logit"] = self.heads["image_cls"](q_hat)
        if "spatial_loc" in self.heads:
            out["spatial_mask"] = self.heads["spatial_loc"](fp, q_hat, x.shape[2:4])
        if return_attention:
            out.update(pyramid=fp, q_hat=q_hat, attention=weights)
        return out

    def forward_video(self, x, return_attention=False):
        """x: (B, T, H, W, 3). One encoder pass feeds every video head."""
        fp, q_hat, weights = self._trunk(x, return_attention)
        out = {}
        if "video_cls" in self.heads:
            out["video_logit"] = self.heads["video_cls"](q_hat)
        if "temporal_loc" in self.heads:
            out["temporal_cls"], out["temporal_reg"] = self.heads["temporal_loc"](fp, q_hat)
        if return_attention:
            out.update(pyramid=fp, q_hat=q_hat, attention=weights)
        return out

    def temporal_stride(self):
        """Frames (of the sampled clip) per position of the last pyramid level."""
        enc = self.cfg.encoder
        t = enc.patch_size[0]
        for flag in enc.temporal_downsample:
            t *= 2 if flag else 1
        return t


def parameter_table(model: nn.Module):
    """Parameter counts keyed by top-level namespace (heads itemized)."""
    table = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] == "heads" else parts[0]
        table[key] = table.get(key, 0) + p.numel()
    return table


def count_parameters(model: nn.Module):
    return sum(p.numel() for p in model.parameters())


def build_model(cfg: ModelConfig, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return OmniFD(cfg).to(dtype)
