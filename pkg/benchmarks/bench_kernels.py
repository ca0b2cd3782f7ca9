"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so one run times both and also checks
that their outputs are bit-identical.
"""

import argparse
import math
import sys
import timeit

import numpy as np

from oba._kernels import _fallback

try:
    from oba._kernels import _ckernels
except ImportError:
    _ckernels = None


def polygon_edges(n_vertices, size, seed=0):
    rng = np.random.default_rng(seed)
    ang = (np.arange(n_vertices) + rng.uniform(0.1, 0.9, n_vertices)) * (2 * math.pi / n_vertices)
    rad = rng.uniform(0.3, 0.5, n_vertices) * size
    x = size / 2 + rad * np.cos(ang)
    y = size / 2 + rad * np.sin(ang)
    xs, ys = np.append(x, x[0]), np.append(y, y[0])
    return tuple(np.ascontiguousarray(a) for a in (xs[:-1], ys[:-1], xs[1:], ys[1:]))


CASES = {
    "rasterize 64 verts, 128x128": lambda m: (m.rasterize_edges, (*polygon_edges(64, 128), 128, 128, 0, 0)),
    "rasterize 512 verts, 1024x1024": lambda m: (m.rasterize_edges, (*polygon_edges(512, 1024), 1024, 1024, 0, 0)),
    "convolve 3x3 on 128x128x3": lambda m: (m.convolve_padded, (np.random.default_rng(0).uniform(0, 255, (130, 130, 3)),
                                                                np.random.default_rng(1).normal(size=(3, 3)))),
    "convolve 7x7 on 512x512x3": lambda m: (m.convolve_padded, (np.random.default_rng(0).uniform(0, 255, (518, 518, 3)),
                                                                np.random.default_rng(1).normal(size=(7, 7)))),
}


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    print(f"{'case':34s} {'cython':>11s} {'numpy':>11s} {'speedup':>8s}  identical")
    for name, make in CASES.items():
        fn_c, a = make(_ckernels)
        fn_p, _ = make(_fallback)
        same = fn_c(*a).tobytes() == fn_p(*a).tobytes()
        tc, tp = best_time(fn_c, a, args.repeat), best_time(fn_p, a, args.repeat)
        print(f"{name:34s} {tc * 1e3:9.3f}ms {tp * 1e3:9.3f}ms {tp / tc:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
