# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled moment kernels.

Rows of all factor posteriors are stacked into one array; ``rows[k, j]`` is
the stacked row id of entry ``k`` in mode ``j``.
"""

import numpy as np

cimport numpy as cnp
from libc.stdlib cimport free, malloc

cnp.import_array()


def accumulate_gram(
    const cnp.int64_t[:, ::1] rows,
    Py_ssize_t skip,
    const double[::1] weights,
    const double[::1] targets,
    const double[:, ::1] means,
    const double[:, :, ::1] seconds,
    Py_ssize_t n_out,
    Py_ssize_t out_offset,
):
    cdef Py_ssize_t K = rows.shape[0]
    cdef Py_ssize_t M = rows.shape[1]
    cdef Py_ssize_t R = means.shape[1]
    cdef Py_ssize_t k, j, r, s, o, row
    cdef double w, wz
    cdef double *b
    cdef double *h

    gram_arr = np.zeros((n_out, R, R), dtype=np.float64)
    rhs_arr = np.zeros((n_out, R), dtype=np.float64)
    cdef double[:, :, ::1] gram = gram_arr
    cdef double[:, ::1] rhs = rhs_arr

    b = <double *> malloc(R * sizeof(double))
    h = <double *> malloc(R * R * sizeof(double))
    if b == NULL or h == NULL:
        free(b)
        free(h)
        raise MemoryError()
    try:
        for k in range(K):
            o = rows[k, skip] - out_offset
            for r in range(R):
                b[r] = 1.0
                for s in range(R):
                    h[r * R + s] = 1.0
            for j in range(M):
                if j == skip:
                    continue
                row = rows[k, j]
                for r in range(R):
                    b[r] *= means[row, r]
                    for s in range(r, R):
                        h[r * R + s] *= seconds[row, r, s]
            w = weights[k]
            wz = w * targets[k]
            for r in range(R):
                rhs[o, r] += wz * b[r]
                for s in range(r, R):
                    gram[o, r, s] += w * h[r * R + s]
        for o in range(n_out):
            for r in range(R):
                for s in range(r + 1, R):
                    gram[o, s, r] = gram[o, r, s]
    finally:
        free(b)
        free(h)
    return gram_arr, rhs_arr


def entry_moments(
    const cnp.int64_t[:, ::1] rows,
    const double[:, ::1] means,
    const double[:, :, ::1] seconds,
):
    cdef Py_ssize_t K = rows.shape[0]
    cdef Py_ssize_t M = rows.shape[1]
    cdef Py_ssize_t R = means.shape[1]
    cdef Py_ssize_t k, j, r, s, row
    cdef double acc, p, acc2
    cdef double *h

    first_arr = np.empty(K, dtype=np.float64)
    second_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] first = first_arr
    cdef double[::1] second = second_arr

    h = <double *> malloc(R * R * sizeof(double))
    if h == NULL:
        raise MemoryError()
    try:
        for k in range(K):
            acc = 0.0
            for r in range(R):
                p = 1.0
                for j in range(M):
                    p *= means[rows[k, j], r]
                acc += p
            first[k] = acc
            for r in range(R * R):
                h[r] = 1.0
            for j in range(M):
                row = rows[k, j]
                for r in range(R):
                    for s in range(r, R):
                        h[r * R + s] *= seconds[row, r, s]
            acc2 = 0.0
            for r in range(R):
                acc2 += h[r * R + r]
                for s in range(r + 1, R):
                    acc2 += 2.0 * h[r * R + s]
            second[k] = acc2
    finally:
        free(h)
    return first_arr, second_arr
