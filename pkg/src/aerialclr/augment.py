"""Patch augmentation primitives and multi-view samplers.

All primitives take and return uint8 HxWx3 arrays.  Color transforms work in
float32 and round back once at the end of a chain, so chained application is
done on a float image via apply_color_spec rather than by calling rounded
primitives in sequence.

Random draws are split from application: sample_color_spec draws every random
choice into a plain dict, apply_color_spec consumes it.  This makes paired
views (same color chain on two images, or same rotation on two images)
trivially exact and lets tests replay a draw.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

REC601 = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class AugmentConfig:
    crop_size: int = 224
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    p_gray: float = 0.2
    p_blur: float = 0.5
    sigma_range: tuple[float, float] = (0.1, 2.0)
    blur_radius: int = 11
    p_flip: float = 0.5


def _as_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) if img.dtype == np.uint8 else img


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# geometric primitives (exact pixel permutations / selections)
# ---------------------------------------------------------------------------


def crop(img: np.ndarray, x: int, y: int, size: int) -> np.ndarray:
    if x < 0 or y < 0 or y + size > img.shape[0] or x + size > img.shape[1]:
        raise ValueError(f"crop ({x},{y},{size}) outside image {img.shape[:2]}")
    return img[y:y + size, x:x + size]


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator):
    """Uniform crop over all legal offsets; returns (patch, (x, y))."""
    h, w = img.shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds image {w}x{h}")
    x = int(rng.integers(0, w - size + 1))
    y = int(rng.integers(0, h - size + 1))
    return crop(img, x, y, size), (x, y)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1]


def rotate90(img: np.ndarray, k: int) -> np.ndarray:
    """Rotate by k * 90 degrees counterclockwise; pure index permutation."""
    if k % 1 != 0:
        raise ValueError(f"rotation index must be an integer, got {k}")
    return np.rot90(img, k=int(k) % 4, axes=(0, 1))


# ---------------------------------------------------------------------------
# photometric primitives
# ---------------------------------------------------------------------------


def grayscale(img: np.ndarray) -> np.ndarray:
    """Luma-weighted grayscale replicated over the three channels."""
    f = _as_float(img)
    g = f @ REC601
    out = np.repeat(g[..., None], 3, axis=2)
    return _to_uint8(out) if img.dtype == np.uint8 else out


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    f = _as_float(img) * factor
    return _to_uint8(f) if img.dtype == np.uint8 else f


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    f = _as_float(img)
    mean = float((f @ REC601).mean())
    out = factor * f + (1.0 - factor) * mean
    return _to_uint8(out) if img.dtype == np.uint8 else out


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    f = _as_float(img)
    g = (f @ REC601)[..., None]
    out = factor * f + (1.0 - factor) * g
    return _to_uint8(out) if img.dtype == np.uint8 else out


def adjust_hue(img: np.ndarray, delta: float) -> np.ndarray:
    """Shift hue by delta (fraction of a full turn), wrapping around."""
    from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

    f = np.clip(_as_float(img), 0.0, 255.0) / 255.0
    hsv = rgb_to_hsv(f)
    hsv[..., 0] = (hsv[..., 0] + delta) % 1.0
    out = hsv_to_rgb(hsv) * 255.0
    return _to_uint8(out) if img.dtype == np.uint8 else out.astype(np.float32)


_JITTER_FNS = {
    "brightness": adjust_brightness,
    "contrast": adjust_contrast,
    "saturation": adjust_saturation,
    "hue": adjust_hue,
}


def gaussian_blur(img: np.ndarray, sigma: float, radius: int = 11) -> np.ndarray:
    """Separable blur with a truncated, renormalized Gaussian kernel."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma**2))
    kernel = (kernel / kernel.sum()).astype(np.float32)
    f = _as_float(img)
    out = convolve1d(f, kernel, axis=0, mode="reflect")
    out = convolve1d(out, kernel, axis=1, mode="reflect")
    return _to_uint8(out) if img.dtype == np.uint8 else out


# ---------------------------------------------------------------------------
# stochastic color chain
# ---------------------------------------------------------------------------


def sample_color_spec(rng: np.random.Generator, cfg: AugmentConfig) -> dict:
    """Draw every random choice of the photometric chain into a plain dict."""
    names = ["brightness", "contrast", "saturation", "hue"]
    order = [names[i] for i in rng.permutation(4)]
    factors = {
        "brightness": float(rng.uniform(max(0.0, 1 - cfg.brightness), 1 + cfg.brightness)),
        "contrast": float(rng.uniform(max(0.0, 1 - cfg.contrast), 1 + cfg.contrast)),
        "saturation": float(rng.uniform(max(0.0, 1 - cfg.saturation), 1 + cfg.saturation)),
        "hue": float(rng.uniform(-cfg.hue, cfg.hue)),
    }
    to_gray = bool(rng.random() < cfg.p_gray)
    blur_sigma = None
    if rng.random() < cfg.p_blur:
        blur_sigma = float(rng.uniform(*cfg.sigma_range))
    return {"order": order, "factors": factors, "gray": to_gray,
            "blur_sigma": blur_sigma}


def apply_color_spec(img: np.ndarray, spec: dict, cfg: AugmentConfig) -> np.ndarray:
    """Apply a drawn photometric chain; float internally, uint8 out."""
    f = _as_float(img)
    for name in spec["order"]:
        f = _JITTER_FNS[name](f, spec["factors"][name])
    if spec["gray"]:
        f = grayscale(f)
    if spec["blur_sigma"] is not None:
        f = gaussian_blur(f, spec["blur_sigma"], radius=cfg.blur_radius)
    return _to_uint8(f)


# ---------------------------------------------------------------------------
# view samplers
# ---------------------------------------------------------------------------


def _flip_draw(img, rng, cfg):
    if rng.random() < cfg.p_flip:
        return hflip(img), True
    return img, False


def two_view_sample(patch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig):
    """Two fully independent augmented views (query and key)."""
    views, trace = {}, {}
    for name in ("q", "k"):
        base, offset = random_crop(patch, cfg.crop_size, rng)
        base, flipped = _flip_draw(base, rng, cfg)
        spec = sample_color_spec(rng, cfg)
        views[name] = apply_color_spec(base, spec, cfg)
        trace[name] = {"crop": offset, "flip": flipped, "color": spec}
    return views, trace


def three_view_sample(patch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig):
    """Three independent views: two query branches plus the key."""
    views, trace = {}, {}
    for name in ("q1", "q2", "k"):
        base, offset = random_crop(patch, cfg.crop_size, rng)
        base, flipped = _flip_draw(base, rng, cfg)
        spec = sample_color_spec(rng, cfg)
        views[name] = apply_color_spec(base, spec, cfg)
        trace[name] = {"crop": offset, "flip": flipped, "color": spec}
    return views, trace


def geo_view_sample(patch: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig):
    """Color/rotation-paired views sharing a single base crop.

    q1 carries the color chain only, q2 carries the rotation only, and the
    key carries both, so q1 and the key share their color draw exactly while
    q2 and the key share the rotation.  The plain base crop is returned too
    for pixel-mixture composition.
    """
    base, offset = random_crop(patch, cfg.crop_size, rng)
    base, flipped = _flip_draw(base, rng, cfg)
    spec = sample_color_spec(rng, cfg)
    rot_k = int(rng.integers(1, 4))  # quarter turns: 90, 180 or 270 degrees
    colored = apply_color_spec(base, spec, cfg)
    views = {
        "base": base.copy(),
        "q1": colored,
        "q2": rotate90(base, rot_k).copy(),
        "k": rotate90(colored, rot_k).copy(),
    }
    trace = {"crop": offset, "flip": flipped, "color": spec, "rot_k": rot_k}
    return views, trace


VIEW_SAMPLERS = {
    "moco_v2": two_view_sample,
    "moco_cld": three_view_sample,
    "moco_geo": geo_view_sample,
    "geocld": geo_view_sample,
    "mixco": geo_view_sample,
}


# ---------------------------------------------------------------------------
# tensor conversion
# ---------------------------------------------------------------------------


def normalize_stack(views: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """uint8 NHWC -> float32 NCHW with per-channel standardization."""
    f = views.astype(np.float32) / 255.0
    f = (f - mean.astype(np.float32)) / std.astype(np.float32)
    return np.ascontiguousarray(f.transpose(0, 3, 1, 2))


def channel_stats(images: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std of a pixel sample, on the [0, 1] scale."""
    flat = np.concatenate([im.reshape(-1, 3).astype(np.float64) for im in images])
    flat = flat / 255.0
    return flat.mean(axis=0), flat.std(axis=0) + 1e-8
