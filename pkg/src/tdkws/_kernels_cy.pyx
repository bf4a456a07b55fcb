# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot inference kernels.

The streaming engine spends almost all of its time in per-frame dense
matrix-vector products; this module provides them as tight C loops over
float32 buffers.  A numpy fallback with identical semantics (up to
float32 summation order) lives in ``_kernels_py``.
"""

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "cython"


def dense_forward(const float[::1] x, const float[:, ::1] weights,
                  const float[::1] bias, bint relu):
    """Affine transform of a single float32 vector with optional ReLU.

    Rows are consumed four at a time so each pass over the output keeps
    four multiply-accumulates in flight per lane.
    """
    cdef Py_ssize_t in_dim = weights.shape[0]
    cdef Py_ssize_t out_dim = weights.shape[1]
    if x.shape[0] != in_dim or bias.shape[0] != out_dim:
        raise ValueError("dense_forward: shape mismatch")
    out_arr = np.empty(out_dim, dtype=np.float32)
    cdef float[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef Py_ssize_t block_end = in_dim - (in_dim & 3)
    cdef float x0, x1, x2, x3
    cdef const float *w0
    cdef const float *w1
    cdef const float *w2
    cdef const float *w3
    for j in range(out_dim):
        out[j] = bias[j]
    for i in range(0, block_end, 4):
        x0 = x[i]
        x1 = x[i + 1]
        x2 = x[i + 2]
        x3 = x[i + 3]
        if x0 == 0.0 and x1 == 0.0 and x2 == 0.0 and x3 == 0.0:
            continue
        w0 = &weights[i, 0]
        w1 = &weights[i + 1, 0]
        w2 = &weights[i + 2, 0]
        w3 = &weights[i + 3, 0]
        for j in range(out_dim):
            out[j] += (x0 * w0[j] + x1 * w1[j]) + (x2 * w2[j] + x3 * w3[j])
    for i in range(block_end, in_dim):
        x0 = x[i]
        if x0 == 0.0:
            continue
        w0 = &weights[i, 0]
        for j in range(out_dim):
            out[j] += x0 * w0[j]
    if relu:
        for j in range(out_dim):
            if out[j] < 0.0:
                out[j] = 0.0
    return out_arr
