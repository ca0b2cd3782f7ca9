# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay bit-identical to ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport ceil

cnp.import_array()


def rasterize_edges(double[::1] x0, double[::1] y0, double[::1] x1,
                    double[::1] y1, Py_ssize_t width, Py_ssize_t height,
                    Py_ssize_t col_off=0, Py_ssize_t row_off=0):
    cdef Py_ssize_t n_edges = x0.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] out = np.zeros((height, width), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out
    cdef unsigned char[::1] toggles = np.zeros(width + 1, dtype=np.uint8)
    cdef Py_ssize_t r, c, e, start
    cdef double ry, xi, cx = <double>col_off, cend = <double>(col_off + width)
    cdef unsigned char acc

    for r in range(height):
        ry = <double>(r + row_off)
        for e in range(n_edges):
            if (y0[e] > ry) != (y1[e] > ry):
                xi = x0[e] + (ry - y0[e]) * (x1[e] - x0[e]) / (y1[e] - y0[e])
                if xi <= cx:
                    start = 0
                elif xi >= cend:
                    start = width
                else:
                    start = <Py_ssize_t>ceil(xi) - col_off
                toggles[start] ^= 1
        acc = 0
        for c in range(width):
            acc ^= toggles[c]
            ov[r, c] = acc
            toggles[c] = 0
        toggles[width] = 0
    return out


def convolve_padded(double[:, :, ::1] padded, double[:, ::1] kernel):
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t h = padded.shape[0] - kh + 1
    cdef Py_ssize_t w = padded.shape[1] - kw + 1
    cdef Py_ssize_t ch = padded.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((h, w, ch), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t y, x, c, i, j
    cdef double acc

    for y in range(h):
        for x in range(w):
            for c in range(ch):
                acc = 0.0
                for i in range(kh):
                    for j in range(kw):
                        acc = acc + kernel[i, j] * padded[y + i, x + j, c]
                ov[y, x, c] = acc
    return out
