"""Procedural faces, forgeries with exact masks, and animated clips."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

MANIPULATIONS = ("color_shift", "warp", "splice", "blur")
DIFF_EPS = 1e-3
MASK_FRACTION = (0.01, 0.6)
FORGED_FRACTION = (0.1, 0.7)
# amplitude range of the periodic resampling trace every manipulation leaves behind
TRACE_AMPLITUDE = (0.04, 0.08)
REGION_RADIUS = (0.18, 0.4)


def derive_seed(seed, *tags):
    """Deterministic 32-bit sub-seed from a root seed and integer/string tags."""
    words = [int(seed) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.extend(tag.encode())
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _grid(H, W):
    y, x = np.mgrid[0:H, 0:W].astype(np.float64)
    return (y + 0.5) / H, (x + 0.5) / W


def _soft_ellipse(y, x, cy, cx, ry, rx, edge_px, H):
    d = np.sqrt(((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2)
    return 1.0 / (1.0 + np.exp(-(1.0 - d) * max(ry, rx) * H / edge_px))


def face_params(rng):
    skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.6, 1.15) + rng.normal(0, 0.03, 3)
    return {
        "bg0": rng.uniform(0.1, 0.9, 3), "bg1": rng.uniform(0.1, 0.9, 3),
        "bg_angle": rng.uniform(0, 2 * np.pi),
        "cy": rng.uniform(0.47, 0.53), "cx": rng.uniform(0.47, 0.53),
        "ry": rng.uniform(0.36, 0.44), "rx": rng.uniform(0.28, 0.35),
        "skin": np.clip(skin, 0.05, 0.95),
        "eye_dy": rng.uniform(-0.14, -0.08), "eye_dx": rng.uniform(0.11, 0.15),
        "eye_r": rng.uniform(0.04, 0.06), "eye_color": rng.uniform(0.0, 0.3, 3),
        "mouth_dy": rng.uniform(0.15, 0.21), "mouth_w": rng.uniform(0.1, 0.16),
        "mouth_open": rng.uniform(0.02, 0.04),
        "mouth_color": np.array([0.7, 0.2, 0.25]) + rng.normal(0, 0.05, 3),
        "noise_amp": rng.uniform(0.015, 0.035),
        "noise_seed": int(rng.integers(2 ** 31)),
    }


def render_face(p, H, W, blink=0.0, mouth=0.0, shift=(0.0, 0.0)):
    """Render face parameters; ``blink`` in [0, 1] closes the eyes, ``shift`` is in pixels."""
    y, x = _grid(H, W)
    y = y - shift[0] / H
    x = x - shift[1] / W
    a = p["bg_angle"]
    g = np.clip(0.5 + 0.5 * ((x - 0.5) * np.cos(a) + (y - 0.5) * np.sin(a)) * 1.4, 0, 1)[..., None]
    img = p["bg0"] * (1 - g) + p["bg1"] * g
    face = _soft_ellipse(y, x, p["cy"], p["cx"], p["ry"], p["rx"], 1.0, H)[..., None]
    shade = 1.0 - 0.25 * ((x - p["cx"]) / p["rx"]) ** 2
    img = img * (1 - face) + (p["skin"] * np.clip(shade, 0.6, 1.0)[..., None]) * face
    eye_ry = p["eye_r"] * (1.0 - 0.85 * np.clip(blink, 0, 1))
    for side in (-1, 1):
        eye = _soft_ellipse(y, x, p["cy"] + p["eye_dy"], p["cx"] + side * p["eye_dx"],
                            eye_ry, p["eye_r"], 0.8, H)[..., None]
        img = img * (1 - eye) + p["eye_color"] * eye
    m_ry = p["mouth_open"] * (1.0 + 1.5 * np.clip(mouth, 0, 1))
    lip = _soft_ellipse(y, x, p["cy"] + p["mouth_dy"], p["cx"], m_ry, p["mouth_w"], 0.8, H)[..., None]
    img = img * (1 - lip) + np.clip(p["mouth_color"], 0, 1) * lip
    noise = np.random.default_rng(p["noise_seed"]).normal(0, 1, (H, W, 3))
    img = img + p["noise_amp"] * ndimage.gaussian_filter(noise, (0.6, 0.6, 0)) * 1.6
    return np.clip(img, 0.0, 1.0)


def gen_real_face(seed, H=32, W=32):
    """Deterministic procedural face with values in [0, 1]."""
    if H < 16 or W < 16:
        raise ValueError("faces need H, W >= 16")
    return render_face(face_params(np.random.default_rng(seed)), H, W)


def _region_alpha(H, W, cy, cx, ry, rx, feather=0.35):
    """Compact-support feathered ellipse: exactly 0 outside, 1 in the core."""
    y, x = _grid(H, W)
    d = np.sqrt(((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2)
    t = np.clip((1.0 - d) / feather, 0.0, 1.0)
    return t * t * (3 - 2 * t)


def sample_manipulation(rng, H, W, kind=None):
    kind = kind or MANIPULATIONS[rng.integers(len(MANIPULATIONS))]
    anchors = [(0.38, 0.37), (0.38, 0.63), (0.68, 0.5), (0.55, 0.5), (0.5, 0.5), (0.58, 0.33),
               (0.58, 0.67)]
    cy, cx = anchors[rng.integers(len(anchors))]
    params = {
        "kind": kind,
        "cy": cy + rng.normal(0, 0.04), "cx": cx + rng.normal(0, 0.04),
        "ry": rng.uniform(*REGION_RADIUS), "rx": rng.uniform(*REGION_RADIUS),
    }
    if kind == "color_shift":
        direction = rng.normal(0, 1, 3)
        params["delta"] = direction / np.linalg.norm(direction) * rng.uniform(0.06, 0.16)
    elif kind == "warp":
        params["amount"] = rng.uniform(1.0, 2.5) * (1 if rng.random() < 0.5 else -1)
        params["twist"] = rng.uniform(-1.0, 1.0)
    elif kind == "splice":
        params["donor_seed"] = int(rng.integers(2 ** 31))
        params["donor_shift"] = rng.uniform(-3, 3, 2)
    elif kind == "blur":
        params["sigma"] = rng.uniform(0.8, 1.6)
    params["trace"] = rng.choice([-1.0, 1.0]) * rng.uniform(*TRACE_AMPLITUDE)
    return params


def apply_manipulation(image, params, strength=1.0):
    H, W = image.shape[:2]
    alpha = _region_alpha(H, W, params["cy"], params["cx"], params["ry"], params["rx"])
    alpha = (alpha * strength)[..., None]
    kind = params["kind"]
    if kind == "color_shift":
        out = image + alpha * params["delta"]
    elif kind == "warp":
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        dy, dx = yy - params["cy"] * H, xx - params["cx"] * W
        r = np.sqrt(dy ** 2 + dx ** 2) + 1e-9
        radial, tw = params["amount"] * alpha[..., 0], params["twist"] * alpha[..., 0]
        sy = yy - radial * dy / r - tw * dx / r * 1.5
        sx = xx - radial * dx / r + tw * dy / r * 1.5
        out = np.stack([ndimage.map_coordinates(image[..., c], [sy, sx], order=1, mode="nearest")
                        for c in range(3)], -1)
    elif kind == "splice":
        donor = gen_real_face(params["donor_seed"], H, W)
        donor = ndimage.shift(donor, (*params["donor_shift"], 0), order=1, mode="nearest")
        out = image * (1 - alpha) + donor * alpha
    elif kind == "blur":
        blurred = ndimage.gaussian_filter(image, (params["sigma"], params["sigma"], 0))
        out = image * (1 - alpha) + blurred * alpha
    else:
        raise ValueError(f"unknown manipulation {kind!r}")
    if "trace" in params:
        checker = np.where(np.add.outer(np.arange(H), np.arange(W)) % 2, 1.0, -1.0)[..., None]
        out = out + alpha * checker * np.asarray(params["trace"])
    return np.clip(out, 0.0, 1.0)


def changed_mask(original, forged):
    """Pixels whose value moved by more than DIFF_EPS, closed with a 3x3 element."""
    diff = np.abs(forged - original).max(axis=-1) > DIFF_EPS
    return ndimage.binary_closing(diff, structure=np.ones((3, 3)), border_value=0) | diff


def forge_image(image, seed, max_tries=50):
    """Apply one random manipulation; returns (forged image, binary mask, params).

    Parameters are re-drawn until the changed area is within MASK_FRACTION.
    """
    rng = np.random.default_rng(seed)
    H, W = image.shape[:2]
    for _ in range(max_tries):
        params = sample_manipulation(rng, H, W)
        forged = apply_manipulation(image, params)
        mask = changed_mask(image, forged)
        frac = mask.mean()
        if MASK_FRACTION[0] <= frac <= MASK_FRACTION[1]:
            # closing can only add pixels, so everything outside stays untouched
            forged = np.where(mask[..., None], forged, image)
            return forged, mask, params
    raise RuntimeError(f"could not forge image with seed {seed} within {max_tries} tries")


def _smooth_bump(k, center, width):
    return np.exp(-0.5 * ((k - center) / width) ** 2)


def gen_video(seed, T_frames=32, fps=8.0, H=32, W=32):
    """Animated face clip (T, H, W, 3); frame 0 is gen_real_face(derive_seed(seed, 'face'))."""
    if T_frames < 8:
        raise ValueError("clips need at least 8 frames")
    p = face_params(np.random.default_rng(derive_seed(seed, "face")))
    rng = np.random.default_rng(derive_seed(seed, "motion"))
    k = np.arange(T_frames, dtype=np.float64)
    blink_t = rng.uniform(4, T_frames - 2, size=rng.integers(1, 3))
    blink = sum(_smooth_bump(k, c, 1.2) for c in blink_t)
    blink = blink - blink[0]
    mouth_period, mouth_phase = rng.uniform(10, 24), rng.uniform(0, 2 * np.pi)
    mouth = 0.5 * (np.sin(2 * np.pi * k / mouth_period + mouth_phase) - np.sin(mouth_phase))
    amp, per, ph = rng.uniform(0.3, 1.2, 2), rng.uniform(16, 40, 2), rng.uniform(0, 2 * np.pi, 2)
    shift = amp[:, None] * (np.sin(2 * np.pi * k[None] / per[:, None] + ph[:, None]) - np.sin(ph)[:, None])
    frames = [render_face(p, H, W, blink=max(blink[i], 0.0), mouth=abs(mouth[i]),
                          shift=(shift[0, i], shift[1, i])) for i in range(T_frames)]
    return np.stack(frames)


def sample_segments(rng, T_frames, min_length=4, max_tries=100):
    """1-3 disjoint, non-touching frame ranges [f0, f1) covering 10-70% of the clip.

    Segments are at least ``min_length`` frames so a strided clip sees them.
    """
    for _ in range(max_tries):
        n = int(rng.integers(1, 4))
        total = int(round(rng.uniform(*FORGED_FRACTION) * T_frames))
        if total < n * min_length or T_frames - total < n - 1:
            continue
        lengths = min_length + rng.multinomial(total - n * min_length, np.ones(n) / n)
        free = T_frames - total - (n - 1)
        gaps = rng.multinomial(free, np.ones(n + 1) / (n + 1))
        gaps[1:-1] += 1
        segs, pos = [], 0
        for i in range(n):
            pos += int(gaps[i])
            segs.append((pos, pos + int(lengths[i])))
            pos += int(lengths[i])
        if FORGED_FRACTION[0] <= total / T_frames <= FORGED_FRACTION[1]:
            return segs
    raise RuntimeError("could not sample forged segments")


def forge_video(video, seed, fps=8.0, max_tries=20):
    """Forge frames inside 1-3 segments with one shared manipulation.

    Returns (forged video, segments in seconds, per-frame masks). The first and
    last frame of each segment use a weaker blend so the forgery fades in/out.
    """
    rng = np.random.default_rng(seed)
    T, H, W = video.shape[:3]
    frames_seg = sample_segments(rng, T)
    for _ in range(max_tries):
        params = sample_manipulation(rng, H, W)
        forged = video.copy()
        masks = np.zeros((T, H, W), dtype=bool)
        ok = True
        for f0, f1 in frames_seg:
            for f in range(f0, f1):
                edge = f1 - f0 > 2 and f in (f0, f1 - 1)
                out = apply_manipulation(video[f], params, strength=0.6 if edge else 1.0)
                m = changed_mask(video[f], out)
                if not m.any() or m.mean() > MASK_FRACTION[1]:
                    ok = False
                    break
                masks[f] = m
                forged[f] = np.where(m[..., None], out, video[f])
            if not ok:
                break
        if ok:
            segments = [(f0 / fps, f1 / fps) for f0, f1 in frames_seg]
            return forged, segments, masks
    raise RuntimeError(f"could not forge video with seed {seed}")
