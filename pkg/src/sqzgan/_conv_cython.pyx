# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled valid cross-correlation (the hot kernel).

The (input channel, kernel row, kernel column) loops stay outermost, so
every output element accumulates its products in exactly the order of the
scalar quadruple-loop reference; the contiguous inner row update is a
restrict-qualified C axpy that the compiler can vectorize without
changing that per-element order. Must be compiled with -ffp-contract=off
so no fused multiply-add alters rounding.
"""

import numpy as np

cdef extern from *:
    """
    #include <stddef.h>
    static inline void row_axpy_f(float * restrict out,
                                  const float * restrict x,
                                  const float w, ptrdiff_t n) {
        for (ptrdiff_t k = 0; k < n; k++) out[k] += x[k] * w;
    }
    static inline void row_axpy_d(double * restrict out,
                                  const double * restrict x,
                                  const double w, ptrdiff_t n) {
        for (ptrdiff_t k = 0; k < n; k++) out[k] += x[k] * w;
    }
    """
    void row_axpy_f(float* out, const float* x, const float w, Py_ssize_t n) nogil
    void row_axpy_d(double* out, const double* x, const double w, Py_ssize_t n) nogil

ctypedef fused real:
    float
    double


def conv2d_valid(real[:, :, :, ::1] x, real[:, :, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = h - kh + 1, wo = wd - kw + 1
    if w.shape[1] != c:
        raise ValueError("channel mismatch between input and weight")
    if ho < 1 or wo < 1:
        raise ValueError("kernel larger than input")

    if real is float:
        out_arr = np.zeros((n, o, ho, wo), dtype=np.float32)
    else:
        out_arr = np.zeros((n, o, ho, wo), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_arr

    cdef Py_ssize_t nn, oo, y, i, a, b
    cdef real ws
    with nogil:
        for nn in range(n):
            for oo in range(o):
                for i in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            ws = w[oo, i, a, b]
                            for y in range(ho):
                                if real is float:
                                    row_axpy_f(<float*> &out[nn, oo, y, 0],
                                               <const float*> &x[nn, i, y + a, b],
                                               <float> ws, wo)
                                else:
                                    row_axpy_d(<double*> &out[nn, oo, y, 0],
                                               <const double*> &x[nn, i, y + a, b],
                                               <double> ws, wo)
    return out_arr
