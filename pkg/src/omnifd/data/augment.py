"""Training-time augmentation on (T, H, W, 3) pixels with (T, H, W) masks.

Geometric ops move pixels and masks together; photometric ops touch pixels
only. Segments are never changed.
"""
from __future__ import annotations

import numpy as np
from scipy import fft, ndimage


def hflip(pixels, mask):
    return pixels[:, :, ::-1].copy(), mask[:, :, ::-1].copy()


def crop(pixels, mask, top, left, height, width):
    sl = (slice(None), slice(top, top + height), slice(left, left + width))
    return pixels[sl].copy(), mask[sl].copy()


def resize(pixels, mask, size):
    """Bilinear for pixels, nearest for masks."""
    T, H, W = pixels.shape[:3]
    zy, zx = size[0] / H, size[1] / W
    out = ndimage.zoom(pixels, (1, zy, zx, 1), order=1, mode="nearest", grid_mode=True)
    # nearest-neighbour mask lookup on pixel centers
    ys = np.minimum(((np.arange(size[0]) + 0.5) / zy).astype(int), H - 1)
    xs = np.minimum(((np.arange(size[1]) + 0.5) / zx).astype(int), W - 1)
    return np.clip(out, 0, 1), mask[:, ys][:, :, xs]


def random_resized_crop(pixels, mask, rng, scale=(0.75, 1.0)):
    T, H, W = pixels.shape[:3]
    s = np.sqrt(rng.uniform(*scale))
    h, w = max(1, int(round(H * s))), max(1, int(round(W * s)))
    top, left = rng.integers(0, H - h + 1), rng.integers(0, W - w + 1)
    p, m = crop(pixels, mask, top, left, h, w)
    return resize(p, m, (H, W))


def block_compress(pixels, step, block=8):
    """JPEG-like artefacts: quantize 8x8 block DCT coefficients with a uniform step."""
    T, H, W, C = pixels.shape
    ph, pw = (-H) % block, (-W) % block
    x = np.pad(pixels, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    Hp, Wp = x.shape[1:3]
    b = x.reshape(T, Hp // block, block, Wp // block, block, C)
    coef = fft.dctn(b, axes=(2, 4), norm="ortho")
    coef = np.round(coef / step) * step
    out = fft.idctn(coef, axes=(2, 4), norm="ortho").reshape(T, Hp, Wp, C)
    return np.clip(out[:, :H, :W], 0, 1)


def color_jitter(pixels, brightness=1.0, contrast=1.0, saturation=1.0):
    x = pixels * brightness
    mean = x.mean(axis=(1, 2, 3), keepdims=True)
    x = (x - mean) * contrast + mean
    gray = x.mean(axis=-1, keepdims=True)
    x = (x - gray) * saturation + gray
    return np.clip(x, 0, 1)


def augment(pixels, mask, rng, p_flip=0.5, p_crop=0.5, p_compress=0.3, p_jitter=0.5):
    """Random flip / resized crop / block compression / colour jitter, one draw per clip.

    ``rng`` may be a seed or a ``numpy.random.Generator``.
    """
    rng = np.random.default_rng(rng)
    if rng.random() < p_flip:
        pixels, mask = hflip(pixels, mask)
    if rng.random() < p_crop:
        pixels, mask = random_resized_crop(pixels, mask, rng)
    if rng.random() < p_compress:
        pixels = block_compress(pixels, rng.uniform(0.02, 0.08))
    if rng.random() < p_jitter:
        pixels = color_jitter(pixels, rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15),
                              rng.uniform(0.8, 1.2))
    return pixels, mask
