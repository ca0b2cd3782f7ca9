import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oba.compositor import ShadowParams
from oba.errors import EmptyBank, MissingPair, NonBinaryMask, SizeMismatch
from oba.evalgen import (ConfusionCounts, GeneratedTestSpec, build_generated_test, confusion, evaluate_run,
                         f1_score, format_table, occupancy, read_pred_mask, write_report)
from oba.geodata import GeoRaster, save_raster
from oba.objectbank import BankIndex

from oracles import binomial_interval, naive_confusion


# ---- metrics

def test_confusion_examples():
    m = np.array([[1, 0], [1, 1]])
    c = confusion(m, m)
    assert c.fp == c.fn == 0 and c.tp == 3
    c = confusion(np.ones((2, 2)), np.zeros((2, 2)))
    assert (c.tp, c.fp, c.fn, c.tn) == (0, 4, 0, 0)
    with pytest.raises(SizeMismatch):
        confusion(np.ones((2, 2)), np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(100))
def test_confusion_matches_naive_64(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((64, 64)) < rng.random()
    t = rng.random((64, 64)) < rng.random()
    c = confusion(p, t)
    assert (c.tp, c.fp, c.fn, c.tn) == naive_confusion(p, t)
    assert c.total == 64 * 64


def test_f1_examples():
    assert f1_score(ConfusionCounts(10, 0, 0)) == 1.0
    assert f1_score(ConfusionCounts(2, 1, 1)) == 2 / 3
    assert f1_score(ConfusionCounts(0, 5, 3)) == 0.0
    assert f1_score(ConfusionCounts()) == 0.0


@given(st.integers(0, 1000), st.integers(0, 1000), st.integers(0, 1000))
def test_f1_symmetric_and_monotone(tp, fp, fn):
    assert f1_score(ConfusionCounts(tp, fp, fn)) == f1_score(ConfusionCounts(tp, fn, fp))
    assert f1_score(ConfusionCounts(tp + 1, fp, fn)) >= f1_score(ConfusionCounts(tp, fp, fn))


# ---- generated test

@pytest.fixture(scope="module")
def small_bank(synthetic_world):
    bank = synthetic_world["bank"]
    keep = {k: v for k, v in bank.objects.items() if max(v.mask.shape) <= 32}
    return BankIndex(keep)


def test_paste_prob_zero(small_bank, rng):
    bg = rng.integers(0, 100, (128, 128, 3), dtype=np.uint8)
    res = build_generated_test(bg, small_bank, GeneratedTestSpec((32, 32), 0.0))
    assert res.mask.sum() == 0 and res.image.tobytes() == bg.tobytes()


def test_empty_bank(rng):
    bg = np.zeros((64, 64, 3), np.uint8)
    with pytest.raises(EmptyBank):
        build_generated_test(bg, BankIndex({}), GeneratedTestSpec((32, 32), 1.0))


def test_occupancy_fraction_1600_cells(small_bank):
    occ = occupancy(0, 1600, 0.6)
    lo, hi = binomial_interval(1600, 0.6)
    assert 0.56 <= occ.mean() <= 0.64 and lo <= occ.mean() <= hi
    spec = GeneratedTestSpec((8, 8), 0.6, seed=0)
    bg = np.zeros((320, 320, 3), np.uint8)
    res = build_generated_test(bg, small_bank, spec)
    np.testing.assert_array_equal(res.occupied, occ)
    # the stream is a plain Bernoulli sequence from the seeded occupancy generator
    ref = np.random.default_rng(np.random.SeedSequence(0).spawn(2)[0]).random(1600) < 0.6
    np.testing.assert_array_equal(occ, ref)


def test_generated_test_properties(small_bank):
    bg = np.full((256, 320, 3), 90, np.uint8)
    spec = GeneratedTestSpec((64, 64), 0.8, ShadowParams(), seed=4)
    a = build_generated_test(bg, small_bank, spec)
    b = build_generated_test(bg, small_bank, spec, workers=8)
    assert a.image.tobytes() == b.image.tobytes() and a.mask.tobytes() == b.mask.tobytes()
    assert a.occupied.size == 5 * 4
    assert len(a.placements) == int(a.occupied.sum()) - a.skipped
    total = 0
    for p in a.placements:
        patch = small_bank.objects[p["object_id"]]
        c, r = p["offset"]
        cell = p["cell"]
        cc, cr = (cell % 5) * 64, (cell // 5) * 64
        h, w = patch.mask.shape
        assert cc <= c and c + w <= cc + 64 and cr <= r and r + h <= cr + 64
        total += int(patch.mask.sum())
    assert a.mask.sum() == total
    assert len({p["shadow"]["angle"] for p in a.placements}) <= 1


def test_partial_cells_unused(small_bank):
    bg = np.zeros((100, 150, 3), np.uint8)
    res = build_generated_test(bg, small_bank, GeneratedTestSpec((64, 64), 1.0, seed=1))
    assert res.occupied.size == 2
    assert res.mask[64:].sum() == 0 and res.mask[:, 128:].sum() == 0


# ---- run evaluation

def _mask(path, arr):
    save_raster(GeoRaster(np.asarray(arr, np.uint8)), path)


def test_evaluate_run(tmp_path, rng):
    pred, truth = tmp_path / "pred", tmp_path / "truth"
    pred.mkdir(); truth.mkdir()
    counts = []
    for i in range(3):
        t = (rng.random((16, 16)) < 0.3).astype(np.uint8)
        p = (rng.random((16, 16)) < 0.3).astype(np.uint8)
        _mask(truth / f"m{i}.png", t * 255)
        _mask(pred / f"m{i}.png", p * 255)
        counts.append(confusion(p, t))
    rep = evaluate_run(pred, truth, workers=2)
    pooled = sum(counts, ConfusionCounts())
    assert rep["pooled"]["f1"] == f1_score(pooled)
    assert [r["name"] for r in rep["per_file"]] == ["m0.png", "m1.png", "m2.png"]
    write_report(rep, tmp_path / "r.json", tmp_path / "r.txt")
    assert json.loads((tmp_path / "r.json").read_text())["pooled"]["tp"] == pooled.tp
    assert "pooled" in format_table(rep)


def test_identical_pair_and_missing(tmp_path, rng):
    pred, truth = tmp_path / "pred", tmp_path / "truth"
    pred.mkdir(); truth.mkdir()
    t = (rng.random((8, 8)) < 0.5).astype(np.uint8)
    t[0, 0] = 1
    _mask(truth / "a.png", t)
    _mask(pred / "a.png", t)
    assert evaluate_run(pred, truth)["pooled"]["f1"] == 1.0
    _mask(truth / "b.png", t)
    with pytest.raises(MissingPair):
        evaluate_run(pred, truth)


def test_non_binary_truth_and_threshold(tmp_path):
    pred, truth = tmp_path / "pred", tmp_path / "truth"
    pred.mkdir(); truth.mkdir()
    _mask(truth / "a.png", np.array([[0, 128], [255, 0]]))
    _mask(pred / "a.png", np.array([[0, 128], [255, 0]]))
    with pytest.raises(NonBinaryMask):
        evaluate_run(pred, truth)
    got = read_pred_mask(pred / "a.png")
    assert got.tolist() == [[False, True], [True, False]]
    assert read_pred_mask(pred / "a.png", threshold=200).tolist() == [[False, False], [True, False]]
