"""Reproducible stream of original and generated training samples.

Sample ``i`` depends only on ``(policy, i)``: its generator is seeded from
``SeedSequence([base_seed, i])``, so any index can be produced on any worker.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .compositor import DEFAULT_MAX_ATTEMPTS, Sample, ShadowParams, generate_sample
from .errors import InvalidPolicy, NoOriginals
from .geodata import GeoRaster, PixelWindow, ensure_dir, save_raster
from .objectbank import BackgroundSource, BankIndex
from .transforms import TransformSuite, apply_suite_logged


@dataclass(frozen=True)
class AugPolicy:
    extra_objects: Tuple[int, int] = (0, 3)
    oba_prob: float = 0.6
    use_extra_background_prob: float = 0.6
    color_aug_prob: float = 0.5
    shadow: ShadowParams = field(default_factory=ShadowParams)
    crop_size: Tuple[int, int] = (128, 128)
    base_seed: int = 0
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    strict: bool = False
    transforms: Optional[TransformSuite] = None

    def __post_init__(self):
        lo, hi = (int(v) for v in self.extra_objects)
        if lo < 0 or lo > hi:
            raise InvalidPolicy("extra_objects must satisfy 0 <= lo <= hi")
        object.__setattr__(self, "extra_objects", (lo, hi))
        for name in ("oba_prob", "use_extra_background_prob", "color_aug_prob"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise InvalidPolicy(f"{name} must be in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        w, h = (int(v) for v in self.crop_size)
        if w <= 0 or h <= 0:
            raise InvalidPolicy("crop_size must be positive")
        object.__setattr__(self, "crop_size", (w, h))
        if self.max_attempts < 1:
            raise InvalidPolicy("max_attempts must be >= 1")
        if isinstance(self.shadow, dict):
            object.__setattr__(self, "shadow", ShadowParams.from_dict(self.shadow))

    @property
    def suite(self) -> TransformSuite:
        base = self.transforms if self.transforms is not None else TransformSuite.default()
        return base.with_probability(self.color_aug_prob)

    def to_dict(self) -> dict:
        return {
            "extra_objects": list(self.extra_objects),
            "oba_prob": self.oba_prob,
            "use_extra_background_prob": self.use_extra_background_prob,
            "color_aug_prob": self.color_aug_prob,
            "shadow": self.shadow.to_dict(),
            "crop_size": list(self.crop_size),
            "base_seed": self.base_seed,
            "max_attempts": self.max_attempts,
            "strict": self.strict,
            "transforms": self.suite.to_dict()["transforms"],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugPolicy":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidPolicy(f"unknown policy fields: {sorted(unknown)}")
        if "shadow" in d:
            d["shadow"] = ShadowParams.from_dict(d["shadow"])
        if "transforms" in d and d["transforms"] is not None:
            d["transforms"] = TransformSuite.from_dict({"transforms": d["transforms"]})
        for key in ("extra_objects", "crop_size"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def load(cls, path) -> "AugPolicy":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise InvalidPolicy(f"{path}: {exc}") from None

    def with_seed(self, seed: int) -> "AugPolicy":
        return replace(self, base_seed=int(seed))


@dataclass(frozen=True, eq=False)
class OriginalCropSource:
    scenes: Tuple[Tuple[GeoRaster, np.ndarray], ...] = ()

    def __post_init__(self):
        scenes = []
        for raster, mask in self.scenes:
            mask = np.asarray(mask.array if isinstance(mask, GeoRaster) else mask, dtype=np.uint8)
            if mask.shape != (raster.height, raster.width):
                raise ValueError("original scene image and mask sizes differ")
            scenes.append((raster, mask))
        object.__setattr__(self, "scenes", tuple(scenes))

    def __len__(self):
        return len(self.scenes)


def sample_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1, np.uint64)[0])


def original_sample(policy: AugPolicy, originals: OriginalCropSource, rng, seed=None) -> Sample:
    w, h = policy.crop_size
    si = int(rng.integers(len(originals)))
    raster, truth = originals.scenes[si]
    if raster.width < w or raster.height < h:
        raise ValueError(f"original scene {si} smaller than crop {w}x{h}")
    win = PixelWindow(int(rng.integers(raster.width - w + 1)), int(rng.integers(raster.height - h + 1)), w, h)
    img = np.ascontiguousarray(raster.data[win.slices][:, :, :3])
    mask = np.ascontiguousarray(truth[win.slices])
    img, mask, steps = apply_suite_logged(policy.suite, img, mask, rng)
    return Sample(img, mask, "original", seed=seed,
                  origin={"scene": si, "window": win.to_list(), "transforms": steps})


def next_sample(policy: AugPolicy, banks: BankIndex, backgrounds: Optional[Sequence[BackgroundSource]],
                originals: Optional[OriginalCropSource], index: int) -> Sample:
    if policy.oba_prob < 1.0 and not originals:
        raise NoOriginals("oba_prob < 1 needs at least one original scene")
    seed = sample_seed(policy.base_seed, index)
    return sample_from_seed(policy, banks, backgrounds, originals, seed)


def sample_from_seed(policy, banks, backgrounds, originals, seed: int) -> Sample:
    """Regenerate a sample from the seed it records."""
    rng = np.random.default_rng(seed)
    if rng.random() < policy.oba_prob:
        sample = generate_sample(policy, banks, backgrounds, rng)
        sample.seed = seed
        return sample
    return original_sample(policy, originals, rng, seed)


def iter_samples(policy, banks, backgrounds, originals, indices: Sequence[int], workers: int = 1):
    """Samples for ``indices`` in order; ``workers`` only changes scheduling."""
    fn = lambda i: next_sample(policy, banks, backgrounds, originals, i)  # noqa: E731
    if workers <= 1:
        for i in indices:
            yield fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as ex:
        yield from ex.map(fn, indices)


def _file_digest(h, path: Path) -> None:
    h.update(path.name.encode())
    h.update(path.read_bytes())


def export_epoch(policy: AugPolicy, banks: BankIndex, backgrounds, originals, count: int, out_dir,
                 workers: int = 1, start: int = 0, config: Optional[dict] = None) -> dict:
    """Write ``count`` image/mask PNG pairs and ``manifest.json`` into ``out_dir``."""
    if count <= 0:
        raise ValueError("count must be > 0")
    out = ensure_dir(out_dir)
    entries: List[dict] = []
    tallies = {"original": 0, "generated": 0}
    h = hashlib.sha256()
    indices = range(start, start + count)
    for i, sample in zip(indices, iter_samples(policy, banks, backgrounds, originals, indices, workers)):
        img_name, mask_name = f"{i:06d}.png", f"{i:06d}_mask.png"
        save_raster(GeoRaster(sample.image), out / img_name)
        save_raster(GeoRaster(sample.mask * 255), out / mask_name)
        _file_digest(h, out / img_name)
        _file_digest(h, out / mask_name)
        tallies[sample.provenance] += 1
        entries.append({"index": i, "seed": sample.seed, "provenance": sample.provenance,
                        "image": img_name, "mask": mask_name,
                        "placements": [p.to_dict() for p in sample.placements]})
    manifest = {"policy": policy.to_dict(), "base_seed": policy.base_seed, "count": count,
                "tallies": tallies, "bank_digest": banks.manifest_digest,
                "entries": entries, "digest": h.hexdigest()}
    if config is not None:
        manifest["config"] = config
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
