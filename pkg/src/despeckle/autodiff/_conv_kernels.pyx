# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 3x3 zero-padded patch gather/scatter (im2col / col2im).

Row ``c*9 + dy*3 + dx`` of the column buffer holds ``x[b, c, i+dy-1, j+dx-1]``.
Scatter adds contributions to each pixel in ascending ``(dy, dx)`` order, the
same order as the numpy fallback, so both backends agree bitwise.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col3x3(const double[:, :, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    out = np.zeros((B, C * 9, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, dy, dx, i, j, r, i0, i1, j0, j1
    with nogil:
        for b in range(B):
            for c in range(C):
                for dy in range(3):
                    i0 = 1 if dy == 0 else 0
                    i1 = H - 1 if dy == 2 else H
                    for dx in range(3):
                        j0 = 1 if dx == 0 else 0
                        j1 = W - 1 if dx == 2 else W
                        r = c * 9 + dy * 3 + dx
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                o[b, r, i, j] = x[b, c, i + dy - 1, j + dx - 1]
    return out


def col2im3x3(const double[:, :, :, ::1] cols, Py_ssize_t C):
    cdef Py_ssize_t B = cols.shape[0], H = cols.shape[2], W = cols.shape[3]
    if cols.shape[1] != C * 9:
        raise ValueError("column buffer does not match channel count")
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, dy, dx, i, j, r, i0, i1, j0, j1
    with nogil:
        for b in range(B):
            for c in range(C):
                for dy in range(3):
                    i0 = 1 if dy == 0 else 0
                    i1 = H - 1 if dy == 2 else H
                    for dx in range(3):
                        j0 = 1 if dx == 0 else 0
                        j1 = W - 1 if dx == 2 else W
                        r = c * 9 + dy * 3 + dx
                        for i in range(i0, i1):
                            for j in range(j0, j1):
                                o[b, c, i + dy - 1, j + dx - 1] += cols[b, r, i, j]
    return out
