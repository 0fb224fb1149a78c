from contextlib import contextmanager

import numpy as np
import pytest
import torch

from omnifd.encoder import EncoderConfig
from omnifd.interaction import InteractionConfig
from omnifd.model import ModelConfig


def finite_difference_check(fn, params, eps=1e-5):
    """Relative error between autograd and central differences over every entry of ``params``.

    ``fn`` must return a scalar tensor; ``params`` are float64 leaf tensors.
    Returns ||g_auto - g_fd|| / max(||g_auto||, ||g_fd||).
    """
    loss = fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1)
                          for g, p in zip(grads, params)])
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                numeric.append((up - down) / (2 * eps))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / scale


def tiny_encoder_config(**kw):
    base = dict(input_size=(16, 16), max_frames=4, patch_size=(1, 4, 4), stage_depths=(2, 1),
                stage_dims=(4, 8), num_heads=(1, 2), window_size=(2, 2, 2),
                temporal_downsample=(False,), mlp_ratio=1.0)
    base.update(kw)
    return EncoderConfig(**base)


def tiny_model_config(tasks="all"):
    return ModelConfig(encoder=tiny_encoder_config(),
                       interaction=InteractionConfig(num_queries=3, dim=8, depth=1, heads=2,
                                                     ffn_expansion=1),
                       tasks=tasks)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def tiny_experiment(tasks="all", steps=4, seed=0, **kw):
    """Seconds-scale experiment on 16x16 data with the tiny model."""
    from omnifd.config import ExperimentConfig

    model = tiny_model_config(tasks)
    base = dict(model=model, batch={"images_per_batch": 4, "videos_per_batch": 2, "frame_count": 4,
                                    "frame_stride": 2},
                data={"n_train_images": 8, "n_train_videos": 4, "n_val_images": 6, "n_val_videos": 4,
                      "image_size": 16, "video_frames": 16},
                total_steps=steps, seed=seed, eval_every=0, eval_batch_size=4)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_data():
    from omnifd.data.dataset import generate_benchmark

    return generate_benchmark(tiny_experiment().data)


ACCEPTANCE_LINES = []


@contextmanager
def criterion(number, title):
    """Record one PASS/FAIL line for an acceptance criterion; the body asserts.

    The yielded dict's ``detail`` entry is appended to the line.
    """
    box = {"detail": ""}
    ok = False
    try:
        yield box
        ok = True
    finally:
        line = f"[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {title}"
        if box["detail"]:
            line += f"  ({box['detail']})"
        ACCEPTANCE_LINES.append(line)
        print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
