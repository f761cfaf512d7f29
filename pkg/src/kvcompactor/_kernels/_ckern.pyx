# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations.

Mirrors _pykern exactly: in-place FWHT butterflies and fused softmax
column-sum reductions, all on C-contiguous float64 arrays.
"""

import numpy as np

from libc.math cimport exp, fmax, INFINITY


def fwht_rows(double[:, ::1] x):
    """Unnormalized Walsh-Hadamard transform of every row, in place."""
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t r, h, i, j
    cdef double a, b
    if n & (n - 1):
        raise ValueError(f"column count must be a power of two, got {n}")
    for r in range(rows):
        h = 1
        while h < n:
            i = 0
            while i < n:
                for j in range(i, i + h):
                    a = x[r, j]
                    b = x[r, j + h]
                    x[r, j] = a + b
                    x[r, j + h] = a - b
                i += 2 * h
            h <<= 1


def softmax_colsum(double[:, ::1] logits, double[::1] out):
    """Accumulate the column sums of the row-softmax of `logits` into `out`."""
    cdef Py_ssize_t m = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s, v
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    for i in range(m):
        mx = logits[i, 0]
        for j in range(1, n):
            mx = fmax(mx, logits[i, j])
        s = 0.0
        for j in range(n):
            v = exp(logits[i, j] - mx)
            buf[j] = v
            s += v
        for j in range(n):
            out[j] += buf[j] / s


def causal_softmax_colsum(double[:, ::1] logits, Py_ssize_t start, double[::1] out):
    """Masked variant of softmax_colsum: row i only sees columns <= start + i."""
    cdef Py_ssize_t m = logits.shape[0]
    cdef Py_ssize_t n = logits.shape[1]
    cdef Py_ssize_t i, j, lim
    cdef double mx, s, v
    cdef double[::1] buf = np.empty(n, dtype=np.float64)
    for i in range(m):
        lim = start + i
        if lim > n - 1:
            lim = n - 1
        mx = -INFINITY
        for j in range(lim + 1):
            mx = fmax(mx, logits[i, j])
        s = 0.0
        for j in range(lim + 1):
            v = exp(logits[i, j] - mx)
            buf[j] = v
            s += v
        for j in range(lim + 1):
            out[j] += buf[j] / s
