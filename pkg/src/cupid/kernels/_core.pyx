# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels.

Every pair score is accumulated sequentially over a fixed index order, so the
bits of an output cell depend only on the two videos involved, never on block
shape, tiling, or which thread ran the call. Both functions release the GIL
and may be invoked concurrently on disjoint outputs.
"""
import numpy as np

NAME = "compiled"


def mean_score_block(double[:, ::1] t_sums, Py_ssize_t[::1] t_counts,
                     double[:, ::1] s_sums, Py_ssize_t[::1] s_counts):
    """Grand-mean pair scores: dot(clip-sum, clip-sum) / (clip counts product)."""
    cdef Py_ssize_t rows = t_sums.shape[0]
    cdef Py_ssize_t cols = s_sums.shape[0]
    cdef Py_ssize_t dim = t_sums.shape[1]
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, i, k
    cdef double acc
    with nogil:
        for j in range(rows):
            for i in range(cols):
                acc = 0.0
                for k in range(dim):
                    acc += t_sums[j, k] * s_sums[i, k]
                o[j, i] = acc / (<double> (t_counts[j] * s_counts[i]))
    return out


def max_score_block(double[:, ::1] t_clips, Py_ssize_t[::1] t_offsets,
                    double[:, ::1] s_clips, Py_ssize_t[::1] s_offsets):
    """Max pair scores: maximum clip-level dot product over the L x Q grid."""
    cdef Py_ssize_t rows = t_offsets.shape[0] - 1
    cdef Py_ssize_t cols = s_offsets.shape[0] - 1
    cdef Py_ssize_t dim = t_clips.shape[1]
    out = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, i, l, q, k
    cdef double acc, best
    with nogil:
        for j in range(rows):
            for i in range(cols):
                best = -1e308
                for l in range(t_offsets[j], t_offsets[j + 1]):
                    for q in range(s_offsets[i], s_offsets[i + 1]):
                        acc = 0.0
                        for k in range(dim):
                            acc += t_clips[l, k] * s_clips[q, k]
                        if acc > best:
                            best = acc
                o[j, i] = best
    return out
