"""Base colour and geometric transformations.

Images are ``(H, W, 3)`` uint8 arrays, masks ``(H, W)`` uint8 arrays of 0/1.
Every random transform takes an explicit ``numpy.random.Generator``; the
deterministic helpers (``rotate90``, ``flip``, ``adjust_*``, ``distort``,
``clahe`` ...) take concrete parameters so they can be tested directly.

Geometric transforms (rotate90, flip, optical_distortion) move image and mask
together; photometric ones touch the image only. Rounding is
round-half-to-even throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import SizeMismatch

GEOMETRIC = ("rotate90", "flip", "optical_distortion")
PHOTOMETRIC = ("gaussian_noise", "hsv_shift", "clahe", "random_contrast",
               "random_brightness", "emboss", "motion_blur")
KINDS = GEOMETRIC + PHOTOMETRIC
FLIP_MODES = ("horizontal", "vertical", "both")

DEFAULT_PARAMS = {
    "rotate90": {},
    "flip": {},
    "optical_distortion": {"k_range": [-0.05, 0.05]},
    "gaussian_noise": {"sigma_range": [2.55, 12.75]},
    "hsv_shift": {"hue_limit": 20.0, "sat_limit": 30.0, "val_limit": 20.0},
    "clahe": {"clip_limit": 4.0, "tile_grid": [8, 8]},
    "random_contrast": {"limit": 0.2},
    "random_brightness": {"limit": 0.2},
    "emboss": {"alpha_range": [0.2, 0.5], "strength_range": [0.2, 0.7]},
    "motion_blur": {"kernel_sizes": [3, 5, 7]},
}
_RANGE_KEYS = ("k_range", "sigma_range", "alpha_range", "strength_range")


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _check(image, mask=None):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != image.shape[:2]:
            raise SizeMismatch(f"mask {mask.shape} does not match image {image.shape[:2]}")
    return image, mask


# ---------------------------------------------------------------- geometric

def rotate90(image, mask=None, k: int = 1):
    """Rotate by 90*k degrees clockwise: pixel (c, r) of a WxH input lands at (H-1-r, c)."""
    k = int(k) % 4
    image = np.rot90(image, -k, axes=(0, 1)).copy()
    if mask is not None:
        mask = np.rot90(mask, -k, axes=(0, 1)).copy()
    return image, mask


def flip(image, mask=None, mode: str = "horizontal"):
    if mode == "horizontal":
        sl = (slice(None), slice(None, None, -1))
    elif mode == "vertical":
        sl = (slice(None, None, -1), slice(None))
    elif mode == "both":
        sl = (slice(None, None, -1), slice(None, None, -1))
    else:
        raise ValueError(f"unknown flip mode {mode!r}")
    image = np.ascontiguousarray(image[sl])
    if mask is not None:
        mask = np.ascontiguousarray(mask[sl])
    return image, mask


def distort(image, mask=None, k: float = 0.0):
    """Radial distortion ``r_src = r_dst * (1 + k r_dst^2)`` about the centre.

    ``r`` is normalised by the half-diagonal. Image is sampled bilinearly,
    mask by nearest neighbour; coordinates are clamped to the edge.
    """
    h, w = image.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    half_diag = math.hypot(w, h) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    r2 = (dx * dx + dy * dy) / (half_diag * half_diag)
    scale = 1.0 + k * r2
    sx = np.clip(cx + dx * scale, 0, w - 1)
    sy = np.clip(cy + dy * scale, 0, h - 1)

    x0 = np.floor(sx).astype(np.intp); y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1); y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]; fy = (sy - y0)[..., None]
    img = image.astype(np.float64)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    out = _to_u8(top * (1 - fy) + bot * fy)
    if mask is not None:
        nx = np.minimum(np.floor(sx + 0.5).astype(np.intp), w - 1)
        ny = np.minimum(np.floor(sy + 0.5).astype(np.intp), h - 1)
        mask = np.ascontiguousarray(mask[ny, nx])
    return out, mask


def optical_distortion(image, mask, k_range, rng):
    k = rng.uniform(*k_range)
    return distort(image, mask, k)


# ---------------------------------------------------------------- photometric

def add_noise(image, sigma: float, rng):
    noise = rng.normal(0.0, sigma, size=image.shape) if sigma > 0 else 0.0
    return _to_u8(image.astype(np.float64) + noise)


def gaussian_noise(image, sigma_range, rng):
    return add_noise(image, rng.uniform(*sigma_range), rng)


def rgb_to_hsv(image):
    """Float HSV: hue in degrees [0, 360), saturation and value on 0..255."""
    rgb = image.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = v - mn
    s = np.where(v > 0, delta / np.where(v > 0, v, 1) * 255.0, 0.0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(v == r, (g - b) / safe,
                 np.where(v == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe))
    h = np.where(delta > 0, (h * 60.0) % 360.0, 0.0)
    return h, s, v


def hsv_to_rgb(h, s, v):
    h = np.mod(h, 360.0) / 60.0
    s = s / 255.0
    i = np.floor(h).astype(np.intp) % 6
    f = h - np.floor(h)
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    r = np.choose(i, choices_r); g = np.choose(i, choices_g); b = np.choose(i, choices_b)
    return _to_u8(np.stack([r, g, b], axis=-1))


def shift_hsv(image, hue: float = 0.0, sat: float = 0.0, val: float = 0.0):
    h, s, v = rgb_to_hsv(image)
    return hsv_to_rgb(np.mod(h + hue, 360.0), np.clip(s + sat, 0, 255), np.clip(v + val, 0, 255))


def hsv_shift(image, hue_limit, sat_limit, val_limit, rng):
    dh = rng.uniform(-hue_limit, hue_limit)
    ds = rng.uniform(-sat_limit, sat_limit)
    dv = rng.uniform(-val_limit, val_limit)
    return shift_hsv(image, dh, ds, dv)


def adjust_brightness(image, factor: float):
    return _to_u8(factor * image.astype(np.float64))


def random_brightness(image, limit, rng):
    return adjust_brightness(image, rng.uniform(1 - limit, 1 + limit))


def gray_mean(image) -> float:
    img = image.astype(np.float64)
    return float((0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]).mean())


def adjust_contrast(image, factor: float):
    mean = gray_mean(image)
    return _to_u8(mean + factor * (image.astype(np.float64) - mean))


def random_contrast(image, limit, rng):
    return adjust_contrast(image, rng.uniform(1 - limit, 1 + limit))


# ---- luma / chroma (full-range BT.601)

def rgb_to_ycbcr(image):
    rgb = image.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return y, cb, cr


def ycbcr_to_rgb(y, cb, cr):
    r = y + 1.402 * (cr - 128.0)
    g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
    b = y + 1.772 * (cb - 128.0)
    return _to_u8(np.stack([r, g, b], axis=-1))


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0, n, tiles + 1)).astype(np.intp)


def clahe_lut(tile: np.ndarray, clip_limit: Optional[float]) -> np.ndarray:
    """Float 256-entry mapping for one tile of 8-bit values.

    The histogram is clipped at ``clip_limit`` times the uniform bin height
    and the excess spread evenly over all bins; ``None`` disables clipping.
    """
    n = tile.size
    hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
    if clip_limit is not None:
        limit = max(clip_limit * n / 256.0, 1.0)
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / 256.0
    return np.cumsum(hist) * (255.0 / n)


def _interp_axis(n: int, edges: np.ndarray):
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    pos = np.arange(n, dtype=np.float64)
    i0 = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 1)
    i1 = np.minimum(i0 + 1, len(centers) - 1)
    span = centers[i1] - centers[i0]
    wgt = np.where(span > 0, (pos - centers[i0]) / np.where(span > 0, span, 1), 0.0)
    return i0, i1, np.clip(wgt, 0.0, 1.0)


def equalize_adaptive(channel: np.ndarray, clip_limit: Optional[float], tile_grid=(8, 8)) -> np.ndarray:
    """Tile-wise histogram equalization of a uint8 channel, bilinear between tiles.

    Returns floats on 0..255.
    """
    h, w = channel.shape
    gx, gy = min(int(tile_grid[0]), w), min(int(tile_grid[1]), h)
    re, ce = _tile_edges(h, gy), _tile_edges(w, gx)
    luts = np.empty((gy, gx, 256))
    for i in range(gy):
        for j in range(gx):
            luts[i, j] = clahe_lut(channel[re[i]:re[i + 1], ce[j]:ce[j + 1]], clip_limit)
    r0, r1, wr = _interp_axis(h, re)
    c0, c1, wc = _interp_axis(w, ce)
    v = channel.astype(np.intp)
    R0, R1, WR = r0[:, None], r1[:, None], wr[:, None]
    C0, C1, WC = c0[None, :], c1[None, :], wc[None, :]
    top = luts[R0, C0, v] * (1 - WC) + luts[R0, C1, v] * WC
    bot = luts[R1, C0, v] * (1 - WC) + luts[R1, C1, v] * WC
    return top * (1 - WR) + bot * WR


def clahe(image, clip_limit: float = 4.0, tile_grid=(8, 8)):
    """CLAHE on the luma channel; chroma is carried through unchanged."""
    y, cb, cr = rgb_to_ycbcr(image)
    y8 = _to_u8(y)
    return ycbcr_to_rgb(equalize_adaptive(y8, clip_limit, tile_grid), cb, cr)


# ---- convolution filters

def convolve(image, kernel) -> np.ndarray:
    """True 2-D convolution per channel with reflect padding (edge not repeated).

    Returns float64 of the same shape as ``image``.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    ph, pw = kernel.shape[0] // 2, kernel.shape[1] // 2
    mode = "reflect" if min(img.shape[:2]) > max(ph, pw) else "symmetric"
    padded = np.pad(img, ((ph, ph), (pw, pw), (0, 0)), mode=mode)
    out = _kernels.convolve_padded(padded, kernel[::-1, ::-1])
    return out[:, :, 0] if squeeze else out


def emboss_kernel(strength: float) -> np.ndarray:
    s = strength
    return np.array([[-1 - s, -s, 0.0], [-s, 1.0, s], [0.0, s, 1 + s]])


def emboss_blend(image, alpha: float, strength: float):
    if alpha == 0:
        return image.copy()
    embossed = convolve(image, emboss_kernel(strength))
    return _to_u8((1 - alpha) * image.astype(np.float64) + alpha * embossed)


def emboss(image, alpha_range, strength_range, rng):
    alpha = rng.uniform(*alpha_range)
    strength = rng.uniform(*strength_range)
    return emboss_blend(image, alpha, strength)


def motion_kernel(size: int, angle: float) -> np.ndarray:
    """Normalised one-pixel-wide line through the centre at ``angle`` degrees."""
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError("motion blur kernel size must be odd and positive")
    k = np.zeros((size, size))
    c = (size - 1) / 2.0
    t = np.linspace(-c, c, 4 * size + 1)
    rad = math.radians(angle)
    xs = np.floor(c + t * math.cos(rad) + 0.5).astype(np.intp)
    ys = np.floor(c + t * math.sin(rad) + 0.5).astype(np.intp)
    k[np.clip(ys, 0, size - 1), np.clip(xs, 0, size - 1)] = 1.0
    return k / k.sum()


def blur_with_kernel(image, kernel):
    if kernel.shape == (1, 1):
        return image.copy()
    return _to_u8(convolve(image, kernel))


def motion_blur(image, kernel_sizes, rng):
    size = int(kernel_sizes[int(rng.integers(len(kernel_sizes)))])
    angle = rng.uniform(0.0, 180.0)
    return blur_with_kernel(image, motion_kernel(size, angle))


# ---------------------------------------------------------------- suites

@dataclass(frozen=True)
class TransformSpec:
    kind: str
    params: dict = field(default_factory=dict)
    probability: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"{self.kind}: probability must be in [0, 1]")
        merged = {**DEFAULT_PARAMS[self.kind], **(self.params or {})}
        for key in _RANGE_KEYS:
            if key in merged:
                lo, hi = merged[key]
                if lo > hi:
                    raise ValueError(f"{self.kind}.{key}: range is not ordered")
        if self.kind == "motion_blur":
            sizes = merged["kernel_sizes"]
            if not sizes or any(int(s) % 2 == 0 or int(s) < 1 for s in sizes):
                raise ValueError("motion_blur.kernel_sizes must be a non-empty set of odd sizes")
        for key in ("hue_limit", "sat_limit", "val_limit", "limit", "clip_limit"):
            if key in merged and merged[key] < 0:
                raise ValueError(f"{self.kind}.{key} must be >= 0")
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "probability": self.probability}


@dataclass(frozen=True)
class TransformSuite:
    """Transforms applied in canonical order (geometric, then photometric)."""

    specs: tuple = ()
    suite_probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.suite_probability <= 1.0:
            raise ValueError("suite_probability must be in [0, 1]")
        specs = tuple(s if isinstance(s, TransformSpec) else TransformSpec(**s) for s in self.specs)
        kinds = [s.kind for s in specs]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each transform kind may appear once per suite")
        specs = tuple(sorted(specs, key=lambda s: KINDS.index(s.kind)))
        object.__setattr__(self, "specs", specs)

    @classmethod
    def default(cls, suite_probability: float = 0.5, probability: float = 0.5) -> "TransformSuite":
        return cls(tuple(TransformSpec(k, {}, probability) for k in KINDS), suite_probability)

    def with_probability(self, suite_probability: float) -> "TransformSuite":
        return TransformSuite(self.specs, suite_probability)

    def to_dict(self) -> dict:
        return {"suite_probability": self.suite_probability,
                "transforms": [s.to_dict() for s in self.specs]}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformSuite":
        return cls(tuple(TransformSpec(**t) for t in d.get("transforms", [])),
                   float(d.get("suite_probability", 0.5)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TransformSuite":
        return cls.from_dict(json.loads(text))


def draw_params(spec: TransformSpec, shape, rng) -> dict:
    """Concrete parameters for one application of ``spec``."""
    p = spec.params
    kind = spec.kind
    if kind == "rotate90":
        square = shape[0] == shape[1]
        return {"k": int(rng.integers(4)) if square else 2 * int(rng.integers(2))}
    if kind == "flip":
        return {"mode": FLIP_MODES[int(rng.integers(3))]}
    if kind == "optical_distortion":
        return {"k": float(rng.uniform(*p["k_range"]))}
    if kind == "gaussian_noise":
        # noise itself needs a seed of its own so replay reproduces it
        return {"sigma": float(rng.uniform(*p["sigma_range"])), "seed": int(rng.integers(2**63))}
    if kind == "hsv_shift":
        return {"hue": float(rng.uniform(-p["hue_limit"], p["hue_limit"])),
                "sat": float(rng.uniform(-p["sat_limit"], p["sat_limit"])),
                "val": float(rng.uniform(-p["val_limit"], p["val_limit"]))}
    if kind == "clahe":
        return {"clip_limit": float(p["clip_limit"]), "tile_grid": list(p["tile_grid"])}
    if kind in ("random_contrast", "random_brightness"):
        return {"factor": float(rng.uniform(1 - p["limit"], 1 + p["limit"]))}
    if kind == "emboss":
        return {"alpha": float(rng.uniform(*p["alpha_range"])),
                "strength": float(rng.uniform(*p["strength_range"]))}
    if kind == "motion_blur":
        sizes = p["kernel_sizes"]
        return {"size": int(sizes[int(rng.integers(len(sizes)))]),
                "angle": float(rng.uniform(0.0, 180.0))}
    raise ValueError(kind)


def apply_concrete(kind: str, params: dict, image, mask=None):
    if kind == "rotate90":
        return rotate90(image, mask, params["k"])
    if kind == "flip":
        return flip(image, mask, params["mode"])
    if kind == "optical_distortion":
        return distort(image, mask, params["k"])
    if kind == "gaussian_noise":
        out = add_noise(image, params["sigma"], np.random.default_rng(params["seed"]))
    elif kind == "hsv_shift":
        out = shift_hsv(image, params["hue"], params["sat"], params["val"])
    elif kind == "clahe":
        out = clahe(image, params["clip_limit"], params["tile_grid"])
    elif kind == "random_contrast":
        out = adjust_contrast(image, params["factor"])
    elif kind == "random_brightness":
        out = adjust_brightness(image, params["factor"])
    elif kind == "emboss":
        out = emboss_blend(image, params["alpha"], params["strength"])
    elif kind == "motion_blur":
        out = blur_with_kernel(image, motion_kernel(params["size"], params["angle"]))
    else:
        raise ValueError(kind)
    return out, mask


def apply_suite_logged(suite: TransformSuite, image, mask=None, rng=None):
    """Like :func:`apply_suite` but also returns the list of applied steps."""
    image, mask = _check(image, mask)
    applied = []
    if rng.random() >= suite.suite_probability:
        return image, mask, applied
    for spec in suite.specs:
        if rng.random() < spec.probability:
            params = draw_params(spec, image.shape, rng)
            image, mask = apply_concrete(spec.kind, params, image, mask)
            applied.append({"kind": spec.kind, "params": params})
    return image, mask, applied


def apply_suite(suite: TransformSuite, image, mask=None, rng=None):
    image, mask, _ = apply_suite_logged(suite, image, mask, rng)
    return image, mask


def replay(log: Sequence[dict], image, mask=None, geometric_only: bool = False):
    """Re-run a logged application; with ``geometric_only`` skip colour steps."""
    for step in log:
        if geometric_only and step["kind"] not in GEOMETRIC:
            continue
        image, mask = apply_concrete(step["kind"], step["params"], image, mask)
    return image, mask
