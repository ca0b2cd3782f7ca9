import json

import numpy as np
import pytest

from oba.errors import CorruptFile, CrsMismatch, EmptyMask, NoCleanWindow, PoolEmpty
from oba.geodata import AffineGeoTransform, GeoRaster, PixelWindow, rasterize_mask, rasterize_union
from oba.objectbank import (EXTRA, LABELED, BackgroundSource, BankIndex, build_background_pool,
                            choose_background, extract_objects, load_bank, sample_background_crop,
                            sample_background_window, save_bank)

from conftest import square
from oracles import binomial_interval, brute_rasterize

T = AffineGeoTransform(0.5, 0, 1000, 0, -0.5, 2000)


def scene(w=64, h=64, value=90, crs=None):
    rng = np.random.default_rng(w * h)
    return GeoRaster(rng.integers(0, 256, (h, w, 3), dtype=np.uint8), T, crs)


def test_single_square_patch():
    s = scene()
    [p] = extract_objects(s, [square("a", 10, 12, 6, T)], padding=0)
    ref = brute_rasterize([[(-0.5, -0.5), (5.5, -0.5), (5.5, 5.5), (-0.5, 5.5), (-0.5, -0.5)]], 6, 6)
    assert p.mask.sum() == ref.sum() == 36
    assert p.bbox == PixelWindow(10, 12, 6, 6)
    np.testing.assert_array_equal(p.pixels, s.data[12:18, 10:16])


def test_outside_scene_reported():
    report = []
    patches = extract_objects(scene(), [square("far", 500, 500, 5, T), square("ok", 2, 2, 3, T)],
                              padding=0, report=report)
    assert [p.object_id for p in patches] == ["ok"]
    assert len(report) == 1 and isinstance(report[0], EmptyMask)


def test_padding_grows_bbox():
    [p] = extract_objects(scene(), [square("a", 20, 20, 8, T)], padding=4)
    assert p.bbox == PixelWindow(16, 16, 16, 16)
    assert p.mask.sum() == 64 and p.mask[:4].sum() == 0


def test_padding_clamped_at_edge():
    [p] = extract_objects(scene(), [square("a", 1, 1, 4, T)], padding=4)
    assert p.bbox == PixelWindow(0, 0, 9, 9)


def test_patch_mask_is_submask_of_scene_rasterization(synthetic_world):
    s = synthetic_world["scene"]
    for fp in synthetic_world["footprints"]:
        [p] = extract_objects(s, [fp], padding=3)
        full = rasterize_mask(fp, s.grid)
        np.testing.assert_array_equal(p.mask, full[p.bbox.slices])


def test_pool_exclusion_union():
    s = scene()
    fps = [square("a", 5, 5, 6, T), square("b", 30, 30, 4, T)]
    [bg] = build_background_pool([(s, fps)], [])
    assert bg.kind == LABELED and bg.exclusion_mask.sum() == 36 + 16
    np.testing.assert_array_equal(bg.exclusion_mask, rasterize_union(fps, s.grid))


def test_pool_extra_only_and_empty():
    [bg] = build_background_pool([], [scene()])
    assert bg.kind == EXTRA and bg.exclusion_mask.sum() == 0
    assert build_background_pool([], []) == []


def test_pool_crs_mismatch():
    with pytest.raises(CrsMismatch):
        build_background_pool([], [scene(crs="EPSG:1"), scene(crs="EPSG:2")])


def test_empty_pool():
    with pytest.raises(PoolEmpty):
        sample_background_crop([], (8, 8), 0.5, np.random.default_rng(0))


def test_extra_prob_one_always_extra(synthetic_world):
    pool = synthetic_world["bank"].backgrounds
    rng = np.random.default_rng(1)
    assert all(pool[choose_background(pool, 1.0, rng)].kind == EXTRA for _ in range(200))
    assert all(pool[choose_background(pool, 0.0, rng)].kind == LABELED for _ in range(200))


def test_extra_fraction_binomial(synthetic_world):
    pool = synthetic_world["bank"].backgrounds
    rng = np.random.default_rng(2)
    n = 10_000
    frac = sum(pool[choose_background(pool, 0.6, rng)].kind == EXTRA for _ in range(n)) / n
    lo, hi = binomial_interval(n, 0.6)
    assert 0.58 <= frac <= 0.62 and lo <= frac <= hi


def test_strict_crops_avoid_exclusion(synthetic_world):
    pool = synthetic_world["bank"].backgrounds
    rng = np.random.default_rng(3)
    for _ in range(300):
        idx, win = sample_background_window(pool, (32, 32), 0.0, rng, strict=True)
        assert pool[idx].exclusion_mask[win.slices].sum() == 0


def test_crop_reproducible(synthetic_world):
    pool = synthetic_world["bank"].backgrounds
    a = sample_background_crop(pool, (48, 40), 0.5, np.random.default_rng(9))
    b = sample_background_crop(pool, (48, 40), 0.5, np.random.default_rng(9))
    assert a.data.shape == (40, 48, 3) and a.data.tobytes() == b.data.tobytes()


def test_dense_scene_fallback_and_strict():
    s = scene(16, 16)
    ex = np.ones((16, 16), np.uint8)
    ex[0:4, 0:4] = 0
    pool = [BackgroundSource(s, LABELED, ex)]
    idx, win = sample_background_window(pool, (8, 8), 0.0, np.random.default_rng(0))
    assert pool[0].overlap(win) < 64
    with pytest.raises(NoCleanWindow):
        sample_background_window(pool, (8, 8), 0.0, np.random.default_rng(0), strict=True)


def test_overlap_matches_direct_sum(rng):
    ex = (rng.random((20, 30)) < 0.3).astype(np.uint8)
    bg = BackgroundSource(scene(30, 20), LABELED, ex)
    for _ in range(50):
        w, h = int(rng.integers(1, 31)), int(rng.integers(1, 21))
        win = PixelWindow(int(rng.integers(31 - w)), int(rng.integers(21 - h)), w, h)
        assert bg.overlap(win) == ex[win.slices].sum()


def test_duplicate_ids_rejected():
    s = scene()
    patches = extract_objects(s, [square("a", 1, 1, 3, T)], 0) * 2
    with pytest.raises(ValueError):
        BankIndex.from_patches(patches)


def test_digest_deterministic_and_content_sensitive():
    s = scene()
    fps = [square("b", 1, 1, 3, T), square("a", 20, 20, 5, T)]
    d1 = BankIndex.from_patches(extract_objects(s, fps, 0)).manifest_digest
    d2 = BankIndex.from_patches(extract_objects(s, fps[::-1], 0)).manifest_digest
    d3 = BankIndex.from_patches(extract_objects(s, fps, 1)).manifest_digest
    assert d1 == d2 != d3


def test_save_load_round_trip(tmp_path, synthetic_world):
    bank = BankIndex(synthetic_world["bank"].objects, [])
    manifest = save_bank(bank, tmp_path / "bank")
    assert len(manifest["objects"]) == len(bank.ids)
    for oid in bank.ids:
        assert (tmp_path / "bank" / f"{oid}.png").exists() and (tmp_path / "bank" / f"{oid}_mask.png").exists()
    back = load_bank(tmp_path / "bank")
    assert back.ids == bank.ids and back.manifest_digest == bank.manifest_digest


def test_tampered_bank_detected(tmp_path, synthetic_world):
    bank = BankIndex(synthetic_world["bank"].objects, [])
    save_bank(bank, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["objects"][0]["bbox"][0] += 1
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(CorruptFile):
        load_bank(tmp_path)
