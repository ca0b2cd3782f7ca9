"""Object and background pools.

Objects are stored as tight (bbox + padding) patches; backgrounds keep the
full source raster plus an exclusion mask of labeled pixels so crops can be
drawn away from existing objects.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorruptFile, CrsMismatch, EmptyMask, NoCleanWindow, PoolEmpty
from .geodata import (
    FootprintPolygon,
    GeoRaster,
    PixelWindow,
    ensure_dir,
    load_footprints,
    load_raster,
    parse_footprints,
    footprints_to_geojson,
    pixel_bbox,
    rasterize_mask,
    rasterize_union,
    read_window,
    save_raster,
)

log = logging.getLogger(__name__)

LABELED = "labeled_scene"
EXTRA = "extra_unlabeled"
MAX_WINDOW_RETRIES = 100
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True, eq=False)
class ObjectPatch:
    object_id: str
    image: GeoRaster
    mask: np.ndarray
    footprint: FootprintPolygon
    bbox: PixelWindow
    source: str = ""

    def __post_init__(self):
        mask = np.ascontiguousarray(self.mask, dtype=np.uint8)
        if mask.shape != (self.image.height, self.image.width):
            raise ValueError(f"{self.object_id}: mask/image size mismatch")
        if not mask.any():
            raise EmptyMask(f"{self.object_id}: mask is empty")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def pixels(self) -> np.ndarray:
        return self.image.data[:, :, :3]


@dataclass(frozen=True, eq=False)
class BackgroundSource:
    raster: GeoRaster
    kind: str
    exclusion_mask: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.kind not in (LABELED, EXTRA):
            raise ValueError(f"unknown background kind {self.kind!r}")
        ex = np.ascontiguousarray(self.exclusion_mask, dtype=np.uint8)
        if ex.shape != (self.raster.height, self.raster.width):
            raise ValueError("exclusion mask size differs from raster")
        ex.setflags(write=False)
        object.__setattr__(self, "exclusion_mask", ex)

    @cached_property
    def _integral(self) -> np.ndarray:
        ii = np.zeros((self.raster.height + 1, self.raster.width + 1), dtype=np.int64)
        ii[1:, 1:] = np.cumsum(np.cumsum(self.exclusion_mask, axis=0, dtype=np.int64), axis=1)
        return ii

    def overlap(self, w: PixelWindow) -> int:
        """Number of excluded pixels inside ``w``."""
        ii = self._integral
        r0, c0 = w.row_off, w.col_off
        r1, c1 = r0 + w.height, c0 + w.width
        return int(ii[r1, c1] - ii[r0, c1] - ii[r1, c0] + ii[r0, c0])


def _hash_array(h, arr: np.ndarray) -> None:
    h.update(str(arr.shape).encode())
    h.update(np.ascontiguousarray(arr).tobytes())


@dataclass(frozen=True, eq=False)
class BankIndex:
    objects: Dict[str, ObjectPatch]
    backgrounds: List[BackgroundSource] = field(default_factory=list)

    def __post_init__(self):
        objs = dict(sorted(self.objects.items()))
        for k, v in objs.items():
            if k != v.object_id:
                raise ValueError(f"object key {k!r} != id {v.object_id!r}")
        object.__setattr__(self, "objects", objs)
        object.__setattr__(self, "backgrounds", list(self.backgrounds))

    @classmethod
    def from_patches(cls, patches: Sequence[ObjectPatch],
                     backgrounds: Sequence[BackgroundSource] = ()) -> "BankIndex":
        objs: Dict[str, ObjectPatch] = {}
        for p in patches:
            if p.object_id in objs:
                raise ValueError(f"duplicate object id {p.object_id!r}")
            objs[p.object_id] = p
        return cls(objs, list(backgrounds))

    @property
    def ids(self) -> List[str]:
        return list(self.objects)

    @cached_property
    def manifest_digest(self) -> str:
        h = hashlib.sha256()
        for oid, p in self.objects.items():
            h.update(oid.encode())
            h.update(json.dumps(p.bbox.to_list()).encode())
            _hash_array(h, p.image.data)
            _hash_array(h, p.mask)
        for bg in self.backgrounds:
            h.update(bg.kind.encode())
            _hash_array(h, bg.raster.data)
            _hash_array(h, bg.exclusion_mask)
        return h.hexdigest()


# ---------------------------------------------------------------- building

def extract_objects(scene: GeoRaster, footprints: Sequence[FootprintPolygon], padding: int = 0,
                    report: Optional[list] = None, source: str = "") -> List[ObjectPatch]:
    """Cut one patch per footprint. Footprints that rasterize to nothing are
    skipped; an :class:`EmptyMask` for each is appended to ``report``."""
    if padding < 0:
        raise ValueError("padding must be >= 0")
    grid = scene.grid
    patches = []
    for fp in footprints:
        bbox = pixel_bbox(fp, grid)
        mask = None
        if bbox is not None:
            c0 = max(0, bbox.col_off - padding)
            r0 = max(0, bbox.row_off - padding)
            c1 = min(scene.width, bbox.col_off + bbox.width + padding)
            r1 = min(scene.height, bbox.row_off + bbox.height + padding)
            bbox = PixelWindow(c0, r0, c1 - c0, r1 - r0)
            mask = rasterize_mask(fp, grid, window=bbox)
        if mask is None or not mask.any():
            err = EmptyMask(f"{fp.object_id}: footprint covers no pixel centre of the scene")
            log.warning("%s", err)
            if report is not None:
                report.append(err)
            continue
        image = read_window(scene, bbox)
        patches.append(ObjectPatch(fp.object_id, image, mask, fp, bbox, source))
    return patches


def build_background_pool(labeled: Sequence[Tuple[GeoRaster, Sequence[FootprintPolygon]]],
                          extra: Sequence[GeoRaster],
                          sources: Optional[Sequence[str]] = None) -> List[BackgroundSource]:
    pool = []
    names = list(sources) if sources is not None else []
    for raster, fps in labeled:
        excl = rasterize_union(fps, raster.grid)
        pool.append(BackgroundSource(raster, LABELED, excl, names.pop(0) if names else ""))
    for raster in extra:
        pool.append(BackgroundSource(raster, EXTRA, np.zeros((raster.height, raster.width), np.uint8),
                                     names.pop(0) if names else ""))
    labels = {bg.raster.crs_label for bg in pool if bg.raster.crs_label is not None}
    if len(labels) > 1:
        raise CrsMismatch(f"background pool mixes CRS labels {sorted(labels)}")
    return pool


# ---------------------------------------------------------------- sampling

def choose_background(pool: Sequence[BackgroundSource], use_extra_prob: float, rng) -> int:
    """Index of the source to crop from: extra with ``use_extra_prob``, else labeled."""
    if not pool:
        raise PoolEmpty("background pool is empty")
    if not 0.0 <= use_extra_prob <= 1.0:
        raise ValueError("use_extra_prob must be in [0, 1]")
    extras = [i for i, bg in enumerate(pool) if bg.kind == EXTRA]
    labeled = [i for i, bg in enumerate(pool) if bg.kind == LABELED]
    want_extra = rng.random() < use_extra_prob
    candidates = (extras if want_extra else labeled) or extras or labeled
    return candidates[int(rng.integers(len(candidates)))]


def sample_background_window(pool: Sequence[BackgroundSource], size: Tuple[int, int],
                             use_extra_prob: float, rng, strict: bool = False
                             ) -> Tuple[int, PixelWindow]:
    w, h = size
    idx = choose_background(pool, use_extra_prob, rng)
    src = pool[idx]
    if src.raster.width < w or src.raster.height < h:
        raise ValueError(f"background {idx} smaller than crop {w}x{h}")
    best, best_overlap = None, None
    for _ in range(MAX_WINDOW_RETRIES):
        win = PixelWindow(int(rng.integers(src.raster.width - w + 1)),
                          int(rng.integers(src.raster.height - h + 1)), w, h)
        ov = src.overlap(win)
        if ov == 0:
            return idx, win
        if best_overlap is None or ov < best_overlap:
            best, best_overlap = win, ov
    if strict:
        raise NoCleanWindow(f"no object-free {w}x{h} window found in background {idx}")
    return idx, best


def sample_background_crop(pool: Sequence[BackgroundSource], size: Tuple[int, int],
                           use_extra_prob: float, rng, strict: bool = False) -> GeoRaster:
    """Draw a crop of ``size`` = (w, h); see :func:`sample_background_window`."""
    idx, win = sample_background_window(pool, size, use_extra_prob, rng, strict)
    return read_window(pool[idx].raster, win)


# ---------------------------------------------------------------- persistence

def _rel(path, base: Path) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base)) if path else ""


def save_bank(bank: BankIndex, out_dir, config: Optional[dict] = None) -> dict:
    """Write patches as ``<id>.png`` / ``<id>_mask.png`` plus ``manifest.json``."""
    out = ensure_dir(out_dir)
    objects = []
    for oid, p in bank.objects.items():
        save_raster(p.image, out / f"{oid}.png")
        save_raster(GeoRaster(p.mask * 255, p.image.transform), out / f"{oid}_mask.png")
        objects.append({
            "id": oid,
            "class": p.footprint.class_label,
            "bbox": p.bbox.to_list(),
            "image": f"{oid}.png",
            "mask": f"{oid}_mask.png",
            "source": p.source,
            "footprint": footprints_to_geojson([p.footprint])["features"][0]["geometry"],
        })
    backgrounds = []
    for i, bg in enumerate(bank.backgrounds):
        excl = f"background_{i}_exclusion.png"
        save_raster(GeoRaster(bg.exclusion_mask * 255), out / excl)
        backgrounds.append({"kind": bg.kind, "source": bg.source, "exclusion": excl,
                            "crs": bg.raster.crs_label})
    manifest = {"format": "oba-bank/1", "objects": objects, "backgrounds": backgrounds,
                "digest": bank.manifest_digest}
    if config is not None:
        manifest["config"] = config
    with open(out / MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _read_mask(path: Path) -> np.ndarray:
    return (load_raster(path).array > 127).astype(np.uint8)


def load_bank(bank_dir) -> BankIndex:
    bank_dir = Path(bank_dir)
    try:
        with open(bank_dir / MANIFEST_NAME, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{bank_dir / MANIFEST_NAME}: {exc}") from None
    patches = []
    for rec in manifest.get("objects", []):
        geom = rec["footprint"]
        fp = parse_footprints({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"id": rec["id"], "class": rec.get("class", "")},
             "geometry": geom}]})[0]
        image = load_raster(bank_dir / rec["image"])
        patches.append(ObjectPatch(rec["id"], image, _read_mask(bank_dir / rec["mask"]), fp,
                                   PixelWindow(*rec["bbox"]), rec.get("source", "")))
    backgrounds = []
    for rec in manifest.get("backgrounds", []):
        src = rec["source"]
        src_path = src if os.path.isabs(src) else bank_dir / src
        raster = load_raster(src_path, crs_label=rec.get("crs"))
        backgrounds.append(BackgroundSource(raster, rec["kind"], _read_mask(bank_dir / rec["exclusion"]),
                                            src))
    bank = BankIndex.from_patches(patches, backgrounds)
    if manifest.get("digest") and manifest["digest"] != bank.manifest_digest:
        raise CorruptFile(f"{bank_dir}: manifest digest does not match bank contents")
    return bank


def add_backgrounds(bank_dir, labeled: Sequence[Tuple[str, str]], extra: Sequence[str]) -> dict:
    """Attach background sources (paths) to an existing bank directory."""
    bank_dir = Path(bank_dir)
    bank = load_bank(bank_dir)
    with open(bank_dir / MANIFEST_NAME, encoding="utf-8") as fh:
        config = json.load(fh).get("config")
    rasters = [(load_raster(s), load_footprints(f)) for s, f in labeled]
    extras = [load_raster(p) for p in extra]
    names = [_rel(s, bank_dir) for s, _ in labeled] + [_rel(p, bank_dir) for p in extra]
    pool = build_background_pool(rasters, extras, names)
    new_bank = BankIndex(bank.objects, bank.backgrounds + pool)
    return save_bank(new_bank, bank_dir, config)
