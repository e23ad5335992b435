# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled layer kernels; mirrors ``_pykernels`` function for function."""
import numpy as np
cimport cython
from cython cimport floating

BACKEND = "cython"


def im2col3x3(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((b * h * w, 9 * c), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t n, i, j, a, d, ch, si, sj, row, base
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    row = (n * h + i) * w + j
                    for a in range(3):
                        si = i + a - 1
                        if si < 0 or si >= h:
                            continue
                        for d in range(3):
                            sj = j + d - 1
                            if sj < 0 or sj >= w:
                                continue
                            base = (a * 3 + d) * c
                            for ch in range(c):
                                cols[row, base + ch] = x[n, si, sj, ch]
    return out


def col2im3x3(floating[:, ::1] cols, Py_ssize_t b, Py_ssize_t h, Py_ssize_t w, Py_ssize_t c):
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((b, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    cdef Py_ssize_t n, i, j, a, d, ch, si, sj, row, base
    # gather form: each input pixel sums the patch slots that read it, in a fixed order
    with nogil:
        for n in range(b):
            for si in range(h):
                for sj in range(w):
                    for a in range(3):
                        i = si - a + 1
                        if i < 0 or i >= h:
                            continue
                        for d in range(3):
                            j = sj - d + 1
                            if j < 0 or j >= w:
                                continue
                            row = (n * h + i) * w + j
                            base = (a * 3 + d) * c
                            for ch in range(c):
                                x[n, si, sj, ch] += cols[row, base + ch]
    return out


def avgpool2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1] // 2, w = x.shape[2] // 2, c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((b, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, i, j, ch
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        y[n, i, j, ch] = (x[n, 2 * i, 2 * j, ch] + x[n, 2 * i, 2 * j + 1, ch]
                                          + x[n, 2 * i + 1, 2 * j, ch]
                                          + x[n, 2 * i + 1, 2 * j + 1, ch]) * 0.25
    return out


def avgpool2_backward(floating[:, :, :, ::1] g):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1], w = g.shape[2], c = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((b, 2 * h, 2 * w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, i, j, ch
    cdef floating v
    with nogil:
        for n in range(b):
            for i in range(h):
                for j in range(w):
                    for ch in range(c):
                        v = g[n, i, j, ch] * 0.25
                        y[n, 2 * i, 2 * j, ch] = v
                        y[n, 2 * i, 2 * j + 1, ch] = v
                        y[n, 2 * i + 1, 2 * j, ch] = v
                        y[n, 2 * i + 1, 2 * j + 1, ch] = v
    return out


cdef inline void _taps(Py_ssize_t o, Py_ssize_t n, Py_ssize_t* i0, Py_ssize_t* i1) noexcept nogil:
    # output o = 2m + r: 0.75 * x[m] + 0.25 * x[m - 1] (r = 0) or x[m + 1] (r = 1), clamped
    cdef Py_ssize_t m = o // 2
    i0[0] = m
    if o % 2 == 0:
        i1[0] = m - 1 if m > 0 else 0
    else:
        i1[0] = m + 1 if m + 1 < n else n - 1


def upsample2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    tmp = np.empty((b, 2 * h, w, c), dtype=dtype)
    out = np.empty((b, 2 * h, 2 * w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] t = tmp
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, p, q, j, ch, a0, a1
    with nogil:
        for n in range(b):
            for p in range(2 * h):
                _taps(p, h, &a0, &a1)
                for j in range(w):
                    for ch in range(c):
                        t[n, p, j, ch] = 0.75 * x[n, a0, j, ch] + 0.25 * x[n, a1, j, ch]
            for p in range(2 * h):
                for q in range(2 * w):
                    _taps(q, w, &a0, &a1)
                    for ch in range(c):
                        y[n, p, q, ch] = 0.75 * t[n, p, a0, ch] + 0.25 * t[n, p, a1, ch]
    return out


def upsample2_backward(floating[:, :, :, ::1] g):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1] // 2, w = g.shape[2] // 2, c = g.shape[3]
    dtype = np.float32 if floating is float else np.float64
    tmp = np.zeros((b, 2 * h, w, c), dtype=dtype)
    out = np.zeros((b, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] t = tmp
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, p, q, i, ch, a0, a1
    with nogil:
        for n in range(b):
            for p in range(2 * h):
                for q in range(2 * w):
                    _taps(q, w, &a0, &a1)
                    for ch in range(c):
                        t[n, p, a0, ch] += 0.75 * g[n, p, q, ch]
                        t[n, p, a1, ch] += 0.25 * g[n, p, q, ch]
            for p in range(2 * h):
                _taps(p, h, &a0, &a1)
                for i in range(w):
                    for ch in range(c):
                        y[n, a0, i, ch] += 0.75 * t[n, p, i, ch]
                        y[n, a1, i, ch] += 0.25 * t[n, p, i, ch]
    return out


def plrelu_forward(floating[:, :, :, ::1] x, double leak):
    dtype = np.float32 if floating is float else np.float64
    out = np.empty_like(np.asarray(x), dtype=dtype)
    cdef floating[:, :, :, ::1] y = out
    cdef Py_ssize_t n, i, j, ch
    cdef floating a = <floating>leak, v
    with nogil:
        for n in range(x.shape[0]):
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    for ch in range(x.shape[3]):
                        v = x[n, i, j, ch]
                        y[n, i, j, ch] = v if v >= 0 else a * v
    return out


def plrelu_backward(floating[:, :, :, ::1] g, floating[:, :, :, ::1] x, double leak):
    dtype = np.float32 if floating is float else np.float64
    out = np.empty_like(np.asarray(g), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = out
    cdef Py_ssize_t n, i, j, ch
    cdef floating a = <floating>leak, v
    cdef double acc = 0.0
    with nogil:
        for n in range(x.shape[0]):
            for i in range(x.shape[1]):
                for j in range(x.shape[2]):
                    for ch in range(x.shape[3]):
                        v = x[n, i, j, ch]
                        if v < 0:
                            gx[n, i, j, ch] = a * g[n, i, j, ch]
                            acc += g[n, i, j, ch] * v
                        else:
                            gx[n, i, j, ch] = g[n, i, j, ch]
    return out, acc
