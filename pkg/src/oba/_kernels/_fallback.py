"""Pure-numpy versions of the compiled kernels.

Floating-point operations are performed in the same order as in
``_ckernels.pyx`` so both backends agree bit-for-bit.
"""

import numpy as np


def rasterize_edges(x0, y0, x1, y1, width, height, col_off=0, row_off=0):
    out = np.zeros((height, width), dtype=np.uint8)
    if len(x0) == 0 or width == 0 or height == 0:
        return out
    rows = np.arange(row_off, row_off + height, dtype=np.float64)[None, :]
    x0 = np.asarray(x0, dtype=np.float64)[:, None]
    y0 = np.asarray(y0, dtype=np.float64)[:, None]
    x1 = np.asarray(x1, dtype=np.float64)[:, None]
    y1 = np.asarray(y1, dtype=np.float64)[:, None]

    crossing = (y0 > rows) != (y1 > rows)
    edge_idx, row_idx = np.nonzero(crossing)
    if edge_idx.size == 0:
        return out
    ex0, ey0 = x0[edge_idx, 0], y0[edge_idx, 0]
    ex1, ey1 = x1[edge_idx, 0], y1[edge_idx, 0]
    ry = (row_idx + row_off).astype(np.float64)
    xi = ex0 + (ry - ey0) * (ex1 - ex0) / (ey1 - ey0)
    start = (np.clip(np.ceil(xi), col_off, col_off + width) - col_off).astype(np.intp)

    toggles = np.zeros((height, width + 1), dtype=np.int64)
    np.add.at(toggles, (row_idx, start), 1)
    out[:] = (np.cumsum(toggles[:, :width], axis=1) & 1).astype(np.uint8)
    return out


def convolve_padded(padded, kernel):
    padded = np.ascontiguousarray(padded, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    h = padded.shape[0] - kh + 1
    w = padded.shape[1] - kw + 1
    out = np.zeros((h, w, padded.shape[2]), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return out
