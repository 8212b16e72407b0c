"""Synthetic aerial-style frame generator.

Frames are large textured ground images sprinkled with three kinds of
blob objects: unannotated tree-like distractors, unannotated rock-like
distractors that share the animals' color and shading law but are round,
and annotated dark elliptical animal-like blobs.  Object counts follow a
Poisson law per frame, so many frames carry no annotation at all.  A
per-frame global color cast and brightness factor act as nuisance
variation that pixel statistics alone do not remove; rocks make first
order color statistics insufficient for telling annotated patches apart
from background, so shape sensitivity is required.

When hetero_strength is positive the terrain is made spatially
heterogeneous: smooth random fields modulate the local blend of fine
versus coarse ground texture, the local tree size, and the local density
of trees and rocks (object totals stay Poisson per frame; placement is
biased toward high-density regions).  Different regions of a frame then
carry distinct local statistics and small windows cut from the frames get
a stable appearance signature.  cast_strength adds an independent smooth
field that shifts the local ground color between a green and a dry brown
palette.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .tiling import BoundingBox, SourceFrame


@dataclass
class SynthConfig:
    n_frames: int = 200
    frame_w: int = 512
    frame_h: int = 512
    animals_per_frame: float = 1.2  # Poisson mean
    trees_per_frame: float = 6.0    # Poisson mean
    rocks_per_frame: float = 0.0    # Poisson mean
    animal_axis_range: tuple[float, float] = (4.0, 9.0)
    tree_radius_range: tuple[float, float] = (8.0, 26.0)
    rock_radius_range: tuple[float, float] = (3.5, 7.0)
    tint_strength: float = 0.35
    brightness_range: tuple[float, float] = (0.7, 1.3)
    texture_sigma: float = 24.0
    noise_sigma: float = 3.0
    hetero_strength: float = 0.0
    cast_strength: float = 0.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if min(self.frame_w, self.frame_h) < 4 * self.animal_axis_range[1]:
            raise ValueError("frame too small for configured animal size")


GROUND_COLOR = np.array([105.0, 110.0, 70.0])
TREE_COLOR = np.array([35.0, 70.0, 40.0])
ANIMAL_COLOR = np.array([70.0, 60.0, 55.0])
# direction of the regional ground cast, roughly green soil toward dry brown
CAST_COLOR = np.array([18.0, -6.0, -22.0])


def ellipse_extents(a: float, b: float, theta: float) -> tuple[float, float]:
    """Half-width and half-height of the tight bounding box of a rotated ellipse."""
    ex = math.sqrt((a * math.cos(theta)) ** 2 + (b * math.sin(theta)) ** 2)
    ey = math.sqrt((a * math.sin(theta)) ** 2 + (b * math.cos(theta)) ** 2)
    return ex, ey


def ellipse_mask(h: int, w: int, cx: float, cy: float, a: float, b: float,
                 theta: float) -> np.ndarray:
    """Boolean H x W mask of pixels whose centers fall inside the ellipse."""
    yy, xx = np.mgrid[0:h, 0:w]
    dx = xx - cx
    dy = yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _paint_ellipse(img: np.ndarray, cx: float, cy: float, a: float, b: float,
                   theta: float, color: np.ndarray) -> None:
    """Fill an ellipse in place, touching only its bounding window."""
    h, w = img.shape[:2]
    ex, ey = ellipse_extents(a, b, theta)
    x0 = max(0, math.floor(cx - ex))
    y0 = max(0, math.floor(cy - ey))
    x1 = min(w, math.ceil(cx + ex) + 1)
    y1 = min(h, math.ceil(cy + ey) + 1)
    if x1 <= x0 or y1 <= y0:
        return
    local = ellipse_mask(y1 - y0, x1 - x0, cx - x0, cy - y0, a, b, theta)
    img[y0:y1, x0:x1][local] = color


def _ground_texture(h: int, w: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth zero-mean field in roughly [-1, 1] driving ground color variation."""
    field_ = gaussian_filter(rng.standard_normal((h, w)), sigma=sigma, mode="reflect")
    peak = np.abs(field_).max()
    if peak > 0:
        field_ = field_ / peak
    return field_


def _smooth_field(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance random field with correlation length around w / 6."""
    lo = gaussian_filter(rng.standard_normal((24, 24)), sigma=4.0, mode="reflect")
    sd = lo.std()
    if sd > 0:
        lo = lo / sd
    ys = np.linspace(0, 23, h)
    xs = np.linspace(0, 23, w)
    y0 = np.clip(ys.astype(int), 0, 22)
    x0 = np.clip(xs.astype(int), 0, 22)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = lo[y0][:, x0]
    b = lo[y0][:, x0 + 1]
    c = lo[y0 + 1][:, x0]
    d = lo[y0 + 1][:, x0 + 1]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _render_frame(frame_id: str, cfg: SynthConfig,
                  rng: np.random.Generator) -> SourceFrame:
    h, w = cfg.frame_h, cfg.frame_w
    if cfg.hetero_strength > 0:
        blend = 0.5 * (1.0 + np.tanh(cfg.hetero_strength * _smooth_field(h, w, rng)))
        size_field = _smooth_field(h, w, rng)
        density = np.exp(0.7 * cfg.hetero_strength * _smooth_field(h, w, rng))
        density = density / density.max()
        fine = _ground_texture(h, w, 0.5 * cfg.texture_sigma, rng)
        coarse = _ground_texture(h, w, 2.0 * cfg.texture_sigma, rng)
        texture = blend * fine + (1.0 - blend) * coarse
    else:
        size_field = None
        density = None
        texture = _ground_texture(h, w, cfg.texture_sigma, rng)
    img = GROUND_COLOR[None, None, :] + 30.0 * texture[..., None]
    if cfg.cast_strength > 0:
        cast_field = cfg.cast_strength * _smooth_field(h, w, rng)
        img = img + cast_field[..., None] * CAST_COLOR[None, None, :]

    def object_center(r: float) -> tuple[float, float]:
        """Uniform placement, biased toward dense regions when fields are on."""
        for _ in range(8):
            cx = rng.uniform(r, w - r)
            cy = rng.uniform(r, h - r)
            if density is None or rng.uniform() < density[int(cy), int(cx)]:
                return cx, cy
        return cx, cy

    n_trees = int(rng.poisson(cfg.trees_per_frame))
    for _ in range(n_trees):
        r = rng.uniform(*cfg.tree_radius_range)
        cx, cy = object_center(r)
        if size_field is not None:
            mult = math.exp(0.4 * cfg.hetero_strength
                            * float(size_field[int(cy), int(cx)]))
            r = min(max(2.0, r * mult), 0.12 * min(w, h))
        shade = rng.uniform(0.8, 1.2)
        _paint_ellipse(img, cx, cy, r, r, 0.0, TREE_COLOR * shade)

    # rocks mimic the animals' color and shading but stay circular
    n_rocks = int(rng.poisson(cfg.rocks_per_frame))
    for _ in range(n_rocks):
        r = rng.uniform(*cfg.rock_radius_range)
        cx, cy = object_center(r)
        shade = rng.uniform(0.55, 0.9)
        _paint_ellipse(img, cx, cy, r, r, 0.0, ANIMAL_COLOR * shade)

    boxes: list[BoundingBox] = []
    n_animals = int(rng.poisson(cfg.animals_per_frame))
    for _ in range(n_animals):
        a = rng.uniform(*cfg.animal_axis_range)
        b = rng.uniform(*cfg.animal_axis_range)
        theta = rng.uniform(0.0, math.pi)
        ex, ey = ellipse_extents(a, b, theta)
        # keep the whole analytic box inside the frame
        cx = rng.uniform(ex + 1.0, w - ex - 1.0)
        cy = rng.uniform(ey + 1.0, h - ey - 1.0)
        shade = rng.uniform(0.55, 0.9)
        _paint_ellipse(img, cx, cy, a, b, theta, ANIMAL_COLOR * shade)
        x0 = math.floor(cx - ex)
        y0 = math.floor(cy - ey)
        x1 = math.ceil(cx + ex)
        y1 = math.ceil(cy + ey)
        boxes.append(BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0))

    img = img + cfg.noise_sigma * rng.standard_normal((h, w, 3))

    # per-frame nuisance: channel gains and overall brightness
    gains = rng.uniform(1.0 - cfg.tint_strength, 1.0 + cfg.tint_strength, size=3)
    brightness = rng.uniform(*cfg.brightness_range)
    img = img * gains[None, None, :] * brightness

    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SourceFrame(frame_id=frame_id, width=w, height=h,
                       pixel_data=pixels, annotations=boxes)


def synth_generate(cfg: SynthConfig, seed: int) -> list[SourceFrame]:
    """Generate cfg.n_frames frames; fully determined by (cfg, seed)."""
    root = np.random.default_rng(seed)
    frame_seeds = root.integers(0, 2**63 - 1, size=cfg.n_frames)
    frames = []
    for i, fseed in enumerate(frame_seeds):
        frame_rng = np.random.default_rng(int(fseed))
        frames.append(_render_frame(f"frame{i:05d}", cfg, frame_rng))
    return frames
