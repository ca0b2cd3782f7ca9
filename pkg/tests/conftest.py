import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oba.geodata import AffineGeoTransform, FootprintPolygon, GeoRaster  # noqa: E402
from oba.objectbank import BankIndex, build_background_pool, extract_objects  # noqa: E402
from oba.synthetic import make_background, make_scene  # noqa: E402


def square(oid, c0, r0, size, t=None):
    """Footprint covering pixel centres c0..c0+size-1, r0..r0+size-1."""
    t = t or AffineGeoTransform.identity()
    corners = [(c0 - 0.5, r0 - 0.5), (c0 + size - 0.5, r0 - 0.5),
               (c0 + size - 0.5, r0 + size - 0.5), (c0 - 0.5, r0 + size - 0.5)]
    ring = [t.pixel_to_world(x, y) for x, y in corners]
    return FootprintPolygon(oid, (tuple(ring + [ring[0]]),))


@pytest.fixture(scope="session")
def synthetic_world():
    scene, fps = make_scene(256, 256, 12, seed=1)
    extra = make_background(256, 256, seed=2)
    patches = extract_objects(scene, fps, padding=0)
    pool = build_background_pool([(scene, fps)], [extra])
    bank = BankIndex.from_patches(patches, pool)
    return {"scene": scene, "footprints": fps, "extra": extra, "bank": bank}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def const_image():
    def make(value, h=16, w=16):
        return np.full((h, w, 3), value, dtype=np.uint8)
    return make


@pytest.fixture
def small_raster():
    data = np.arange(10 * 10 * 3, dtype=np.uint16).reshape(10, 10, 3) % 256
    return GeoRaster(data.astype(np.uint8), AffineGeoTransform(2.0, 0.0, 10.0, 0.0, -2.0, 20.0))


# ---- acceptance summary: one PASS/FAIL line per criterion

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__.endswith("test_acceptance"):
        name = item.originalname
        if rep.when == "call" or (rep.when == "setup" and rep.failed):
            _acceptance[name] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for name, label in CRITERIA.items():
        if name in _acceptance:
            terminalreporter.write_line(f"{_acceptance[name]}  {label}")
