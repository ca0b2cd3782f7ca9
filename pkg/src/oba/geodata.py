"""Raster and footprint I/O, affine georeferencing and polygon rasterization.

Pixel ``(col, row)`` is addressed by its centre: the affine forward map sends
integer indices to pixel centres, which is what the ESRI world-file
convention describes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import _kernels
from .errors import (
    CorruptFile,
    InvalidGeometry,
    ParseError,
    SingularTransform,
    UnsupportedFormat,
    WindowOutOfBounds,
    WorldFileMalformed,
)

_TIFF_COMPRESSIONS = {"raw", "tiff_deflate", "tiff_adobe_deflate"}
_MODE_CHANNELS = {"L": 1, "LA": 2, "RGB": 3, "RGBA": 4}


@dataclass(frozen=True)
class AffineGeoTransform:
    """x = a*col + b*row + c ; y = d*col + e*row + f"""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @classmethod
    def identity(cls) -> "AffineGeoTransform":
        return cls(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

    @property
    def determinant(self) -> float:
        return self.a * self.e - self.b * self.d

    @property
    def invertible(self) -> bool:
        return self.determinant != 0.0 and math.isfinite(self.determinant)

    def pixel_to_world(self, col, row):
        return (self.a * col + self.b * row + self.c,
                self.d * col + self.e * row + self.f)

    def world_to_pixel(self, x, y):
        det = self.determinant
        if det == 0.0 or not math.isfinite(det):
            raise SingularTransform(f"transform is not invertible (det={det})")
        dx = x - self.c
        dy = y - self.f
        return ((self.e * dx - self.b * dy) / det,
                (-self.d * dx + self.a * dy) / det)

    def translated(self, col_off: int, row_off: int) -> "AffineGeoTransform":
        """Transform of a window whose pixel (0, 0) is (col_off, row_off) here."""
        c, f = self.pixel_to_world(col_off, row_off)
        return AffineGeoTransform(self.a, self.b, c, self.d, self.e, f)

    def to_world_file(self) -> str:
        vals = (self.a, self.d, self.b, self.e, self.c, self.f)
        return "".join(f"{float(v)!r}\n" for v in vals)

    @classmethod
    def from_world_file(cls, text: str) -> "AffineGeoTransform":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if len(lines) != 6:
            raise WorldFileMalformed(f"expected 6 numeric lines, got {len(lines)}")
        try:
            a, d, b, e, c, f = (float(v) for v in lines)
        except ValueError as exc:
            raise WorldFileMalformed(str(exc)) from None
        return cls(a, b, c, d, e, f)

    def to_list(self) -> list:
        return [self.a, self.b, self.c, self.d, self.e, self.f]


@dataclass(frozen=True)
class PixelWindow:
    col_off: int
    row_off: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("window size must be positive")

    @property
    def slices(self):
        return (slice(self.row_off, self.row_off + self.height),
                slice(self.col_off, self.col_off + self.width))

    def inside(self, width: int, height: int) -> bool:
        return (self.col_off >= 0 and self.row_off >= 0
                and self.col_off + self.width <= width
                and self.row_off + self.height <= height)

    def to_list(self) -> list:
        return [self.col_off, self.row_off, self.width, self.height]


@dataclass(frozen=True)
class Grid:
    """Pixel grid geometry without sample data."""

    width: int
    height: int
    transform: AffineGeoTransform = field(default_factory=AffineGeoTransform.identity)


@dataclass(frozen=True, eq=False)
class GeoRaster:
    """8-bit raster of shape (height, width, channels) with optional georeference."""

    data: np.ndarray
    transform: Optional[AffineGeoTransform] = None
    crs_label: Optional[str] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or not 1 <= data.shape[2] <= 4:
            raise ValueError(f"raster data must be HxWxC with 1..4 channels, got {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError("raster must be non-empty")
        if data.dtype != np.uint8:
            raise ValueError(f"raster data must be uint8, got {data.dtype}")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def grid(self) -> Grid:
        return Grid(self.width, self.height,
                    self.transform if self.transform is not None else AffineGeoTransform.identity())

    @property
    def array(self) -> np.ndarray:
        """Samples as (H, W) for single-channel rasters, (H, W, C) otherwise."""
        return self.data[:, :, 0] if self.channels == 1 else self.data


@dataclass(frozen=True)
class FootprintPolygon:
    object_id: str
    rings: tuple
    class_label: str = ""

    def __post_init__(self):
        rings = tuple(tuple((float(x), float(y)) for x, y in ring) for ring in self.rings)
        if not rings:
            raise InvalidGeometry(f"{self.object_id}: polygon has no rings")
        for ring in rings:
            _validate_ring(ring, self.object_id)
        if _self_intersects(rings[0]):
            raise InvalidGeometry(f"{self.object_id}: exterior ring self-intersects")
        object.__setattr__(self, "rings", rings)

    def reversed(self) -> "FootprintPolygon":
        return FootprintPolygon(self.object_id, tuple(r[::-1] for r in self.rings), self.class_label)


def _validate_ring(ring, object_id):
    if len(ring) < 2 or ring[0] != ring[-1]:
        raise InvalidGeometry(f"{object_id}: ring is not closed")
    if len(set(ring[:-1])) < 3:
        raise InvalidGeometry(f"{object_id}: ring has fewer than 3 distinct vertices")


def _orient(p, q, r):
    v = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    return (v > 0) - (v < 0)


def _on_segment(p, q, r):
    return (min(p[0], r[0]) <= q[0] <= max(p[0], r[0])
            and min(p[1], r[1]) <= q[1] <= max(p[1], r[1]))


def _segments_intersect(p1, p2, p3, p4):
    o1, o2 = _orient(p1, p2, p3), _orient(p1, p2, p4)
    o3, o4 = _orient(p3, p4, p1), _orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and _on_segment(p1, p3, p2)) or (o2 == 0 and _on_segment(p1, p4, p2))
            or (o3 == 0 and _on_segment(p3, p1, p4)) or (o4 == 0 and _on_segment(p3, p2, p4)))


def _self_intersects(ring) -> bool:
    segs = [(ring[i], ring[i + 1]) for i in range(len(ring) - 1)]
    n = len(segs)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges share a vertex; only a fold-back counts
                shared = segs[i][1] if j == i + 1 else segs[i][0]
                a = segs[i][0] if j == i + 1 else segs[i][1]
                b = segs[j][1] if j == i + 1 else segs[j][0]
                if _orient(a, shared, b) == 0 and a != shared and b != shared:
                    # collinear: overlapping iff pointing back over each other
                    if ((a[0] - shared[0]) * (b[0] - shared[0])
                            + (a[1] - shared[1]) * (b[1] - shared[1])) > 0:
                        return True
                continue
            if _segments_intersect(*segs[i], *segs[j]):
                return True
    return False


# ---------------------------------------------------------------- I/O

def _world_file_path(path: Path) -> Path:
    return path.with_suffix(".wld")


def load_raster(path, crs_label: Optional[str] = None) -> GeoRaster:
    """Read an 8-bit PNG or uncompressed/deflate TIFF plus optional ``.wld``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in ("PNG", "TIFF"):
                raise UnsupportedFormat(f"{path}: unsupported format {fmt}")
            if fmt == "TIFF":
                comp = im.info.get("compression", "raw")
                if comp not in _TIFF_COMPRESSIONS:
                    raise UnsupportedFormat(f"{path}: TIFF compression {comp!r} not supported")
            mode = im.mode
            if mode in ("1", "P"):
                im = im.convert("L" if mode == "1" else "RGB")
                mode = im.mode
            if mode not in _MODE_CHANNELS:
                raise UnsupportedFormat(f"{path}: pixel mode {mode} is not 8-bit")
            data = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise CorruptFile(f"{path}: {exc}") from None

    transform = None
    wld = _world_file_path(path)
    if wld.exists():
        transform = AffineGeoTransform.from_world_file(wld.read_text(encoding="ascii"))
    return GeoRaster(data, transform, crs_label)


def save_raster(raster: GeoRaster, path) -> None:
    """Write PNG or TIFF (deflate) and a ``.wld`` sidecar when georeferenced."""
    path = Path(path)
    arr = raster.array
    suffix = path.suffix.lower()
    im = Image.fromarray(arr)
    if suffix == ".png":
        im.save(path, format="PNG")
    elif suffix in (".tif", ".tiff"):
        im.save(path, format="TIFF", compression="tiff_deflate")
    else:
        raise UnsupportedFormat(f"{path}: cannot write {suffix}")
    if raster.transform is not None:
        with open(_world_file_path(path), "w", encoding="ascii", newline="\n") as fh:
            fh.write(raster.transform.to_world_file())


def _parse_ring(coords, object_id):
    if not isinstance(coords, list):
        raise ParseError(f"{object_id}: ring coordinates must be a list")
    try:
        return tuple((float(p[0]), float(p[1])) for p in coords)
    except (TypeError, ValueError, IndexError):
        raise ParseError(f"{object_id}: bad coordinate in ring") from None


def parse_footprints(doc) -> list:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("FeatureCollection has no features list")
    out = []
    for idx, feat in enumerate(features):
        if not isinstance(feat, dict) or feat.get("type") != "Feature":
            raise ParseError(f"feature {idx} is not a Feature")
        props = feat.get("properties") or {}
        fid = str(props["id"]) if props.get("id") is not None else str(idx)
        cls = str(props.get("class", ""))
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon":
            rings = [_parse_ring(r, fid) for r in coords or []]
            out.append(FootprintPolygon(fid, tuple(rings), cls))
        elif gtype == "MultiPolygon":
            for k, part in enumerate(coords or []):
                pid = f"{fid}_{k}"
                rings = [_parse_ring(r, pid) for r in part]
                out.append(FootprintPolygon(pid, tuple(rings), cls))
        else:
            raise ParseError(f"feature {fid}: unsupported geometry type {gtype!r}")
    return out


def load_footprints(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return parse_footprints(doc)


def footprints_to_geojson(footprints: Sequence[FootprintPolygon]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature",
             "properties": {"id": fp.object_id, "class": fp.class_label},
             "geometry": {"type": "Polygon",
                          "coordinates": [[list(p) for p in ring] for ring in fp.rings]}}
            for fp in footprints
        ],
    }


# ---------------------------------------------------------------- geometry

def world_to_pixel(t: AffineGeoTransform, x, y):
    return t.world_to_pixel(x, y)


def pixel_to_world(t: AffineGeoTransform, col, row):
    return t.pixel_to_world(col, row)


def _pixel_edges(poly: FootprintPolygon, t: AffineGeoTransform):
    xs0, ys0, xs1, ys1 = [], [], [], []
    for ring in poly.rings:
        pts = np.asarray(ring, dtype=np.float64)
        cols, rows = t.world_to_pixel(pts[:, 0], pts[:, 1])
        xs0.append(cols[:-1]); ys0.append(rows[:-1])
        xs1.append(cols[1:]); ys1.append(rows[1:])
    return (np.concatenate(xs0), np.concatenate(ys0),
            np.concatenate(xs1), np.concatenate(ys1))


def rasterize_mask(poly: FootprintPolygon, grid: Grid,
                   window: Optional[PixelWindow] = None) -> np.ndarray:
    """0/1 uint8 array, 1 where the pixel centre is inside ``poly`` (even-odd).

    With ``window``, only that part of the grid is produced; values equal the
    full-grid rasterization restricted to the window.
    """
    t = grid.transform
    if not t.invertible:
        raise SingularTransform(f"transform is not invertible (det={t.determinant})")
    if window is None:
        window = PixelWindow(0, 0, grid.width, grid.height)
    x0, y0, x1, y1 = _pixel_edges(poly, t)
    out = np.zeros((window.height, window.width), dtype=np.uint8)

    # only scan rows/cols the polygon can touch
    allx = np.concatenate([x0, x1]); ally = np.concatenate([y0, y1])
    r_lo = max(window.row_off, int(math.floor(ally.min())))
    r_hi = min(window.row_off + window.height, int(math.ceil(ally.max())) + 1)
    c_lo = max(window.col_off, int(math.floor(allx.min())))
    c_hi = min(window.col_off + window.width, int(math.ceil(allx.max())) + 1)
    if r_lo >= r_hi or c_lo >= c_hi:
        return out
    sub = _kernels.rasterize_edges(x0, y0, x1, y1, c_hi - c_lo, r_hi - r_lo, c_lo, r_lo)
    out[r_lo - window.row_off:r_hi - window.row_off,
        c_lo - window.col_off:c_hi - window.col_off] = sub
    return out


def rasterize_polygon(poly: FootprintPolygon, target) -> GeoRaster:
    """Binary mask raster (1 channel, values 0/1) on the target's grid."""
    grid = target.grid if isinstance(target, GeoRaster) else target
    mask = rasterize_mask(poly, grid)
    crs = target.crs_label if isinstance(target, GeoRaster) else None
    return GeoRaster(mask, grid.transform, crs)


def rasterize_union(polys: Sequence[FootprintPolygon], grid: Grid) -> np.ndarray:
    out = np.zeros((grid.height, grid.width), dtype=np.uint8)
    for p in polys:
        out |= rasterize_mask(p, grid)
    return out


def read_window(r: GeoRaster, w: PixelWindow) -> GeoRaster:
    if not w.inside(r.width, r.height):
        raise WindowOutOfBounds(f"window {w.to_list()} outside {r.width}x{r.height} raster")
    rows, cols = w.slices
    transform = r.transform.translated(w.col_off, w.row_off) if r.transform is not None else None
    return GeoRaster(r.data[rows, cols].copy(), transform, r.crs_label)


def pixel_bbox(poly: FootprintPolygon, grid: Grid) -> Optional[PixelWindow]:
    """Smallest window holding every pixel centre the polygon can cover, clipped to the grid."""
    x0, y0, x1, y1 = _pixel_edges(poly, grid.transform)
    xs = np.concatenate([x0, x1]); ys = np.concatenate([y0, y1])
    c0 = max(0, int(math.ceil(xs.min()))); c1 = min(grid.width - 1, int(math.floor(xs.max())))
    r0 = max(0, int(math.ceil(ys.min()))); r1 = min(grid.height - 1, int(math.floor(ys.max())))
    if c0 > c1 or r0 > r1:
        return None
    return PixelWindow(c0, r0, c1 - c0 + 1, r1 - r0 + 1)


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
