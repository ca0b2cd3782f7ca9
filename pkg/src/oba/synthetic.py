"""Procedural desk-scale dataset: bright rectangular roofs on textured ground.

Used for smoke runs of the full pipeline without real imagery.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .geodata import (
    AffineGeoTransform,
    FootprintPolygon,
    GeoRaster,
    ensure_dir,
    footprints_to_geojson,
    load_raster,
    rasterize_union,
    save_raster,
)

PIXEL_SIZE = 0.5
ROOF_THRESHOLD = 150


def _ground(rng, width, height):
    base = rng.normal(0, 1, (height, width, 3))
    smooth = uniform_filter(base, size=(9, 9, 1))
    ground = np.array([70.0, 95.0, 55.0]) + 60.0 * smooth + rng.normal(0, 6, (height, width, 3))
    return np.clip(ground, 0, 125).astype(np.uint8)


def make_scene(width=512, height=512, n_buildings=25, seed=0, origin=(500000.0, 4000000.0),
               prefix="b"):
    """Return ``(raster, footprints)`` with non-touching rectangular buildings."""
    rng = np.random.default_rng(seed)
    t = AffineGeoTransform(PIXEL_SIZE, 0.0, origin[0], 0.0, -PIXEL_SIZE, origin[1])
    image = _ground(rng, width, height)
    occupied = np.zeros((height, width), dtype=bool)
    footprints = []
    tries = 0
    while len(footprints) < n_buildings and tries < 50 * n_buildings:
        tries += 1
        w, h = int(rng.integers(10, 36)), int(rng.integers(10, 36))
        c, r = int(rng.integers(4, width - w - 4)), int(rng.integers(4, height - h - 4))
        if occupied[r - 4:r + h + 4, c - 4:c + w + 4].any():
            continue
        occupied[r:r + h, c:c + w] = True
        corners = [(c - 0.5, r - 0.5), (c + w - 0.5, r - 0.5), (c + w - 0.5, r + h - 0.5),
                   (c - 0.5, r + h - 0.5)]
        # L-shaped notch on some roofs
        if w > 16 and h > 16 and rng.random() < 0.4:
            nw, nh = w // 3, h // 3
            corners = [(c - 0.5, r - 0.5), (c + w - nw - 0.5, r - 0.5), (c + w - nw - 0.5, r + nh - 0.5),
                       (c + w - 0.5, r + nh - 0.5), (c + w - 0.5, r + h - 0.5), (c - 0.5, r + h - 0.5)]
        ring = [t.pixel_to_world(x, y) for x, y in corners]
        ring.append(ring[0])
        footprints.append(FootprintPolygon(f"{prefix}{len(footprints):03d}", (tuple(ring),), "building"))
    grid = GeoRaster(image, t).grid
    roof_mask = rasterize_union(footprints, grid).astype(bool)
    roof = np.array([200.0, 195.0, 190.0]) + rng.normal(0, 8, (height, width, 3))
    tint = rng.normal(0, 12, 3)
    image = np.where(roof_mask[..., None], np.clip(roof + tint, ROOF_THRESHOLD + 10, 255), image)
    return GeoRaster(image.astype(np.uint8), t), footprints


def make_background(width=512, height=512, seed=0, origin=(510000.0, 4000000.0)):
    rng = np.random.default_rng(seed)
    t = AffineGeoTransform(PIXEL_SIZE, 0.0, origin[0], 0.0, -PIXEL_SIZE, origin[1])
    return GeoRaster(_ground(rng, width, height), t)


def threshold_predict(image: np.ndarray) -> np.ndarray:
    """Trivial roof detector: all channels brighter than ``ROOF_THRESHOLD``."""
    return (np.asarray(image)[..., :3].min(axis=-1) > ROOF_THRESHOLD).astype(np.uint8)


def write_dataset(out_dir, seed=0, n_scenes=2, buildings_per_scene=25, size=512) -> dict:
    """Write scenes (+ world files, GeoJSON, masks) and two clean backgrounds."""
    out = ensure_dir(out_dir)
    index = {"scenes": [], "extra": []}
    for i in range(n_scenes):
        raster, fps = make_scene(size, size, buildings_per_scene, seed=seed * 100 + i,
                                 origin=(500000.0 + i * 1000.0, 4000000.0), prefix=f"s{i}_b")
        save_raster(raster, out / f"scene_{i}.png")
        mask = rasterize_union(fps, raster.grid)
        save_raster(GeoRaster(mask * 255, raster.transform), out / f"scene_{i}_mask.png")
        with open(out / f"scene_{i}.geojson", "w", encoding="utf-8") as fh:
            json.dump(footprints_to_geojson(fps), fh, indent=1)
        index["scenes"].append({"image": f"scene_{i}.png", "mask": f"scene_{i}_mask.png",
                                "footprints": f"scene_{i}.geojson"})
    for j in range(2):
        bg = make_background(size, size, seed=seed * 100 + 50 + j,
                             origin=(520000.0 + j * 1000.0, 4000000.0))
        save_raster(bg, out / f"extra_{j}.png")
        index["extra"].append(f"extra_{j}.png")
    with open(out / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2)
    return index


def predict_dir(image_dir, out_dir, suffix_filter="_mask") -> list:
    """Apply :func:`threshold_predict` to every PNG image in ``image_dir``."""
    out = ensure_dir(out_dir)
    written = []
    for p in sorted(Path(image_dir).glob("*.png")):
        if p.stem.endswith(suffix_filter):
            continue
        pred = threshold_predict(load_raster(p).data)
        save_raster(GeoRaster(pred * 255), out / p.name)
        written.append(p.name)
    return written
