"""Paste extracted objects, with synthetic shadows, onto background crops."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyBank
from .geodata import GeoRaster
from .objectbank import BankIndex, BackgroundSource, sample_background_window
from .transforms import TransformSuite, apply_suite, apply_suite_logged

log = logging.getLogger(__name__)

DEFAULT_MAX_ATTEMPTS = 50


@dataclass(frozen=True)
class ShadowParams:
    angle_range: Tuple[float, float] = (0.0, 360.0)
    length_range: Tuple[float, float] = (2.0, 10.0)
    intensity_range: Tuple[float, float] = (0.2, 0.6)

    def __post_init__(self):
        for name in ("angle_range", "length_range", "intensity_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if lo > hi:
                raise ValueError(f"shadow {name} is not ordered")
            object.__setattr__(self, name, (lo, hi))
        if self.length_range[0] < 0:
            raise ValueError("shadow length must be >= 0")
        if not (0.0 <= self.intensity_range[0] and self.intensity_range[1] <= 1.0):
            raise ValueError("shadow intensity must lie in [0, 1]")

    @classmethod
    def disabled(cls) -> "ShadowParams":
        return cls(intensity_range=(0.0, 0.0))

    def to_dict(self) -> dict:
        return {"angle_range": list(self.angle_range), "length_range": list(self.length_range),
                "intensity_range": list(self.intensity_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "ShadowParams":
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass
class Placement:
    object_id: str
    offset: Tuple[int, int]  # (col, row) of the patch's top-left in crop coordinates
    size: Tuple[int, int]    # (width, height) of the pasted patch
    transform_seed: int
    transforms: list = field(default_factory=list)
    shadow: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "offset": list(self.offset), "size": list(self.size),
                "transform_seed": self.transform_seed, "transforms": self.transforms,
                "shadow": self.shadow}


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    provenance: str
    placements: List[Placement] = field(default_factory=list)
    seed: Optional[int] = None
    dropped: int = 0
    oversize: int = 0
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError("sample image and mask sizes differ")

    def record(self) -> dict:
        return {"provenance": self.provenance, "seed": self.seed,
                "placements": [p.to_dict() for p in self.placements],
                "dropped": self.dropped, "oversize": self.oversize, "origin": self.origin}


def shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate by (dx, dy) pixels, dropping whatever leaves the frame."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src = mask[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
    out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return out


def shadow_offset(angle: float, length: float) -> Tuple[int, int]:
    rad = np.deg2rad(angle)
    return int(np.rint(length * np.cos(rad))), int(np.rint(length * np.sin(rad)))


def render_shadow(background: np.ndarray, object_mask: np.ndarray, params: ShadowParams, rng=None,
                  angle: Optional[float] = None, length: Optional[float] = None,
                  alpha: Optional[float] = None, protect: Optional[np.ndarray] = None):
    """Darken the footprint translated along the light direction.

    Values not forced are drawn from ``params``. Pixels under ``object_mask``
    or ``protect`` are never darkened. Returns ``(image, info)``.
    """
    if angle is None:
        angle = float(rng.uniform(*params.angle_range))
    if length is None:
        length = float(rng.uniform(*params.length_range))
    if alpha is None:
        alpha = float(rng.uniform(*params.intensity_range))
    dx, dy = shadow_offset(angle, length)
    shadow = shift_mask(object_mask, dx, dy).astype(bool) & ~object_mask.astype(bool)
    if protect is not None:
        shadow &= ~protect.astype(bool)
    out = np.array(background, copy=True)
    if alpha > 0 and shadow.any():
        out[shadow] = np.rint((1.0 - alpha) * out[shadow].astype(np.float64)).astype(np.uint8)
    return out, {"angle": angle, "length": length, "alpha": alpha, "offset": [dx, dy]}


def _pad_square(image: np.ndarray, mask: np.ndarray):
    h, w = mask.shape
    side = max(h, w)
    if h == w:
        return image, mask
    pad = ((0, side - h), (0, side - w))
    return np.pad(image, pad + ((0, 0),), mode="edge"), np.pad(mask, pad)


def _trim(image: np.ndarray, mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None, None
    sl = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    return image[sl], mask[sl]


def prepare_object(bank: BankIndex, object_id: str, suite: Optional[TransformSuite], seed: int):
    """Transformed (image, mask, log) for one object draw, trimmed to its mask."""
    patch = bank.objects[object_id]
    image, mask = patch.pixels.copy(), patch.mask.copy()
    steps: list = []
    if suite is not None and suite.specs and suite.suite_probability > 0:
        image, mask = _pad_square(image, mask)
        image, mask, steps = apply_suite_logged(suite, image, mask, np.random.default_rng(seed))
    image, mask = _trim(image, mask)
    return image, mask, steps


def paste(canvas: np.ndarray, union: np.ndarray, image: np.ndarray, mask: np.ndarray,
          col: int, row: int) -> None:
    """Copy object pixels where its mask is set; updates ``canvas`` and ``union`` in place."""
    h, w = mask.shape
    region = canvas[row:row + h, col:col + w]
    m = mask.astype(bool)
    region[m] = image[m]
    union[row:row + h, col:col + w] |= mask


def place_objects(crop, pool: BankIndex, count_range: Tuple[int, int], suite: Optional[TransformSuite],
                  shadow: ShadowParams, max_attempts: int = DEFAULT_MAX_ATTEMPTS, rng=None,
                  seed: Optional[int] = None) -> Sample:
    """Paste a random number of transformed objects without overlap.

    The light direction is drawn once per call and shared by every object.
    """
    canvas = np.array(crop.data[:, :, :3] if isinstance(crop, GeoRaster) else crop, copy=True)
    H, W = canvas.shape[:2]
    union = np.zeros((H, W), dtype=np.uint8)
    lo, hi = count_range
    if lo < 0 or lo > hi:
        raise ValueError("count_range must satisfy 0 <= lo <= hi")
    n = int(rng.integers(lo, hi + 1))
    sample = Sample(canvas, union, "generated", seed=seed)
    if n == 0:
        return sample
    ids = pool.ids
    if not ids:
        raise EmptyBank("object bank is empty")
    angle = float(rng.uniform(*shadow.angle_range))

    for _ in range(n):
        oid = ids[int(rng.integers(len(ids)))]
        tseed = int(rng.integers(2**63))
        image, mask, steps = prepare_object(pool, oid, suite, tseed)
        if mask is None:
            sample.dropped += 1
            continue
        h, w = mask.shape
        if h > H or w > W:
            sample.oversize += 1
            log.debug("object %s (%dx%d) larger than crop, skipped", oid, w, h)
            continue
        spot = None
        for _ in range(max_attempts):
            col = int(rng.integers(W - w + 1))
            row = int(rng.integers(H - h + 1))
            if not (union[row:row + h, col:col + w] & mask).any():
                spot = (col, row)
                break
        if spot is None:
            sample.dropped += 1
            continue
        col, row = spot
        full = np.zeros((H, W), dtype=np.uint8)
        full[row:row + h, col:col + w] = mask
        canvas[:], sinfo = render_shadow(canvas, full, shadow, rng, angle=angle, protect=union)
        paste(canvas, union, image, mask, col, row)
        sample.placements.append(Placement(oid, (col, row), (w, h), tseed, steps, sinfo))
    return sample


def generate_sample(policy, banks: BankIndex, backgrounds: Optional[Sequence[BackgroundSource]],
                    rng) -> Sample:
    """One synthesized sample: background crop, background transforms, pasted objects.

    ``rng`` may be a Generator or an integer seed (recorded in the sample).
    """
    seed = None
    if isinstance(rng, (int, np.integer)):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    pool = banks.backgrounds if backgrounds is None else backgrounds
    suite = policy.suite
    src_idx, window = sample_background_window(pool, tuple(policy.crop_size),
                                               policy.use_extra_background_prob, rng,
                                               strict=policy.strict)
    crop = pool[src_idx].raster.data[window.slices][:, :, :3]
    bg, _ = apply_suite(suite, np.ascontiguousarray(crop), None, rng)
    sample = place_objects(bg, banks, tuple(policy.extra_objects), suite, policy.shadow,
                           policy.max_attempts, rng, seed=seed)
    sample.origin = {"background": src_idx, "window": window.to_list()}
    return sample
