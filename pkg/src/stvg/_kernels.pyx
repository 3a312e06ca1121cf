# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled masked-max kernels.

Masks are passed as per-frame inclusive rectangles ``(r0, r1, c0, c1)``;
a row with ``r0 < 0`` means the frame has no box.  Results must be
bit-identical to :mod:`stvg._kernels_py`.
"""
import numpy as np

IMPLEMENTATION = "cython"


def track_max(const double[:, :, ::1] values, const int[:, :, ::1] rects):
    cdef Py_ssize_t P = rects.shape[0], T = rects.shape[1]
    cdef Py_ssize_t p, t, i, j
    cdef int r0, r1, c0, c1
    cdef double best, v
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    for p in range(P):
        best = 0.0
        for t in range(T):
            r0 = rects[p, t, 0]
            if r0 < 0:
                continue
            r1 = rects[p, t, 1]
            c0 = rects[p, t, 2]
            c1 = rects[p, t, 3]
            for i in range(r0, r1 + 1):
                for j in range(c0, c1 + 1):
                    v = values[t, i, j]
                    if v > best:
                        best = v
        o[p] = best
    return out


def pair_track_max(const double[:, :, ::1] a, const double[:, :, ::1] b, const int[:, :, ::1] rects):
    cdef Py_ssize_t P = rects.shape[0], T = rects.shape[1]
    cdef Py_ssize_t p, t, i, j
    cdef int r0, r1, c0, c1
    cdef double best, v
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    for p in range(P):
        best = 0.0
        for t in range(T):
            r0 = rects[p, t, 0]
            if r0 < 0:
                continue
            r1 = rects[p, t, 1]
            c0 = rects[p, t, 2]
            c1 = rects[p, t, 3]
            for i in range(r0, r1 + 1):
                for j in range(c0, c1 + 1):
                    v = a[t, i, j] * b[t, i, j]
                    if v > best:
                        best = v
        o[p] = best
    return out


def inside_outside_max(const double[:, :, ::1] values, const int[:, ::1] rects):
    cdef Py_ssize_t T = values.shape[0], H = values.shape[1], W = values.shape[2]
    cdef Py_ssize_t t, i, j
    cdef int r0, r1, c0, c1
    cdef double inside = 0.0, outside = 0.0, v
    cdef bint in_box
    for t in range(T):
        r0 = rects[t, 0]
        r1 = rects[t, 1]
        c0 = rects[t, 2]
        c1 = rects[t, 3]
        for i in range(H):
            for j in range(W):
                v = values[t, i, j]
                in_box = r0 >= 0 and r0 <= i and i <= r1 and c0 <= j and j <= c1
                if in_box:
                    if v > inside:
                        inside = v
                elif v > outside:
                    outside = v
    return inside, outside


def frame_max(const double[:, :, ::1] values):
    cdef Py_ssize_t T = values.shape[0], H = values.shape[1], W = values.shape[2]
    cdef Py_ssize_t t, i, j
    cdef double best, v
    out = np.empty(T, dtype=np.float64)
    cdef double[::1] o = out
    for t in range(T):
        best = values[t, 0, 0]
        for i in range(H):
            for j in range(W):
                v = values[t, i, j]
                if v > best:
                    best = v
        o[t] = best
    return out
