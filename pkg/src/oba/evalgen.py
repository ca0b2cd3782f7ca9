"""Generated test scenes and pixel-wise F1 evaluation."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .compositor import ShadowParams, paste, render_shadow
from .errors import EmptyBank, MissingPair, NonBinaryMask, SizeMismatch
from .geodata import GeoRaster, load_raster
from .objectbank import BankIndex

MASK_SUFFIXES = (".png", ".tif", ".tiff")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred.array if isinstance(pred, GeoRaster) else pred).astype(bool)
    truth = np.asarray(truth.array if isinstance(truth, GeoRaster) else truth).astype(bool)
    if pred.shape != truth.shape:
        raise SizeMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def f1_score(c: ConfusionCounts) -> float:
    """``tp / (tp + (fp + fn) / 2)``; 0.0 when there is nothing to score."""
    denom = c.tp + 0.5 * (c.fp + c.fn)
    return c.tp / denom if denom > 0 else 0.0


# ---------------------------------------------------------------- generated test

@dataclass(frozen=True)
class GeneratedTestSpec:
    cell_size: Tuple[int, int] = (128, 128)
    paste_prob: float = 0.6
    shadow: ShadowParams = field(default_factory=ShadowParams)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.paste_prob <= 1.0:
            raise ValueError("paste_prob must be in [0, 1]")
        if min(self.cell_size) <= 0:
            raise ValueError("cell_size must be positive")


@dataclass
class GeneratedTest:
    image: np.ndarray
    mask: np.ndarray
    occupied: np.ndarray      # per-cell Bernoulli outcome, row-major
    placements: List[dict]
    skipped: int = 0          # occupied cells whose object did not fit the cell

    def __iter__(self):
        return iter((self.image, self.mask))


def _cell_streams(seed: int):
    occ, place = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(occ), place


def occupancy(seed: int, n_cells: int, paste_prob: float) -> np.ndarray:
    rng, _ = _cell_streams(seed)
    return rng.random(n_cells) < paste_prob


def build_generated_test(background, objects: BankIndex, spec: GeneratedTestSpec,
                         workers: int = 1) -> GeneratedTest:
    """Paste at most one object per grid cell, each cell occupied with ``paste_prob``.

    Trailing partial cells are left empty. All shadows share one light
    direction; earlier objects are never darkened by later shadows.
    """
    bg = np.array(background.data[:, :, :3] if isinstance(background, GeoRaster) else background,
                  dtype=np.uint8, copy=True)
    H, W = bg.shape[:2]
    cw, ch = spec.cell_size
    ncx, ncy = W // cw, H // ch
    if ncx == 0 or ncy == 0:
        raise ValueError(f"background {W}x{H} smaller than one {cw}x{ch} cell")
    n_cells = ncx * ncy
    occ_rng, place_ss = _cell_streams(spec.seed)
    occupied = occ_rng.random(n_cells) < spec.paste_prob
    mask = np.zeros((H, W), dtype=np.uint8)
    if not occupied.any():
        return GeneratedTest(bg, mask, occupied, [])
    ids = objects.ids
    if not ids:
        raise EmptyBank("object bank is empty")

    scene_rng = np.random.default_rng(place_ss.spawn(1)[0])
    angle = float(scene_rng.uniform(*spec.shadow.angle_range))
    cell_seeds = place_ss.spawn(n_cells)

    def draw(cell: int):
        if not occupied[cell]:
            return None
        rng = np.random.default_rng(cell_seeds[cell])
        oid = ids[int(rng.integers(len(ids)))]
        patch = objects.objects[oid]
        h, w = patch.mask.shape
        length = float(rng.uniform(*spec.shadow.length_range))
        alpha = float(rng.uniform(*spec.shadow.intensity_range))
        if h > ch or w > cw:
            return (cell, oid, None, None, length, alpha)
        return (cell, oid, int(rng.integers(cw - w + 1)), int(rng.integers(ch - h + 1)), length, alpha)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            draws = list(ex.map(draw, range(n_cells)))
    else:
        draws = [draw(c) for c in range(n_cells)]

    placements, skipped = [], 0
    for d in draws:
        if d is None:
            continue
        cell, oid, dc, dr, length, alpha = d
        if dc is None:
            skipped += 1
            continue
        patch = objects.objects[oid]
        pm = patch.mask
        col = (cell % ncx) * cw + dc
        row = (cell // ncx) * ch + dr
        full = np.zeros((H, W), dtype=np.uint8)
        full[row:row + pm.shape[0], col:col + pm.shape[1]] = pm
        bg, sinfo = render_shadow(bg, full, spec.shadow, angle=angle, length=length, alpha=alpha,
                                  protect=mask)
        paste(bg, mask, patch.pixels, pm, col, row)
        placements.append({"cell": cell, "object_id": oid, "offset": [col, row], "shadow": sinfo})
    return GeneratedTest(bg, mask, occupied, placements, skipped)


# ---------------------------------------------------------------- run evaluation

def read_truth_mask(path) -> np.ndarray:
    arr = _single_channel(load_raster(path), path)
    vals = set(np.unique(arr).tolist())
    if not (vals <= {0, 1} or vals <= {0, 255}):
        raise NonBinaryMask(f"{path}: ground-truth mask has values {sorted(vals)[:6]}")
    return arr > 0


def read_pred_mask(path, threshold: int = 127) -> np.ndarray:
    arr = _single_channel(load_raster(path), path)
    vals = np.unique(arr)
    if vals.max(initial=0) <= 1:
        return arr > 0
    return arr > threshold


def _single_channel(r: GeoRaster, path) -> np.ndarray:
    data = r.data
    if r.channels > 1 and not all(np.array_equal(data[..., 0], data[..., k]) for k in range(1, r.channels)):
        raise NonBinaryMask(f"{path}: multi-channel mask with differing channels")
    return data[..., 0]


def evaluate_pair(pred_path, truth_path, threshold: int = 127) -> ConfusionCounts:
    return confusion(read_pred_mask(pred_path, threshold), read_truth_mask(truth_path))


def evaluate_run(pred_dir, truth_dir, threshold: int = 127, workers: int = 1) -> dict:
    """Per-file and pooled (micro-averaged) F1 for every mask in ``truth_dir``."""
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    truths = sorted(p for p in truth_dir.iterdir() if p.suffix.lower() in MASK_SUFFIXES)
    pairs = []
    for t in truths:
        p = pred_dir / t.name
        if not p.exists():
            raise MissingPair(f"no prediction for {t.name} in {pred_dir}")
        pairs.append((p, t))

    fn = lambda pt: evaluate_pair(pt[0], pt[1], threshold)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            counts = list(ex.map(fn, pairs))
    else:
        counts = [fn(pt) for pt in pairs]

    per_file = [{"name": t.name, **asdict(c), "f1": f1_score(c)} for (_, t), c in zip(pairs, counts)]
    pooled = sum(counts, ConfusionCounts())
    return {"per_file": per_file, "pooled": {**asdict(pooled), "f1": f1_score(pooled)},
            "threshold": threshold,
            "note": "F1 of a pair with tp=fp=fn=0 is reported as 0.0"}


def format_table(report: dict) -> str:
    rows = [(r["name"], r["tp"], r["fp"], r["fn"], r["tn"], f"{r['f1']:.3f}") for r in report["per_file"]]
    p = report["pooled"]
    rows.append(("pooled", p["tp"], p["fp"], p["fn"], p["tn"], f"{p['f1']:.3f}"))
    header = ("name", "TP", "FP", "FN", "TN", "F1")
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda row: "  ".join(  # noqa: E731
        str(v).ljust(w) if i == 0 else str(v).rjust(w) for i, (v, w) in enumerate(zip(row, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows[:-1]]
    lines += ["  ".join("-" * w for w in widths), fmt(rows[-1])]
    return "\n".join(lines) + "\n"


def write_report(report: dict, out_json, out_txt: Optional[str] = None) -> None:
    with open(out_json, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if out_txt:
        Path(out_txt).write_text(format_table(report), encoding="utf-8")
