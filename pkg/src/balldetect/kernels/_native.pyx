# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels: strip im2col + BLAS dgemm.

Numerics match the numpy backend: float32 storage, float64 accumulation
inside the GEMMs and the input-gradient scatter.  Work buffers are laid
out (K, M) so the fill/scatter loops stream contiguously; strips over
output rows bound the float64 scratch.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm

# ~64 MB of float64 im2col scratch per strip.
cdef Py_ssize_t STRIP_BUDGET = 8_000_000


cdef inline int _imax(int a, int b) noexcept nogil:
    return a if a > b else b


cdef inline int _imin(int a, int b) noexcept nogil:
    return a if a < b else b


cdef void _valid_ox(int out_w, int stride, int pad, int k, int size,
                    int* lo, int* hi) noexcept nogil:
    # Output positions ox with 0 <= ox*stride - pad + k < size.
    cdef int l = 0, h = out_w
    if pad > k:
        l = (pad - k + stride - 1) // stride
    h = _imin(out_w, (size + pad - k - 1) // stride + 1)
    lo[0] = _imin(l, out_w)
    hi[0] = _imax(h, lo[0])


cdef void _fill_cols_t(const float[:, :, :, ::1] x, double[:, ::1] cols_t,
                       int row0, int rows, int out_w, int stride,
                       int pad_h, int pad_w, int kh, int kw) noexcept nogil:
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int b, oy, ox, ch, ky, kx, iy, lo, hi
    cdef Py_ssize_t col, m0
    cdef const float* src
    cdef double* dst
    for ch in range(c):
        for ky in range(kh):
            for kx in range(kw):
                col = (<Py_ssize_t>ch * kh + ky) * kw + kx
                _valid_ox(out_w, stride, pad_w, kx, w, &lo, &hi)
                for b in range(n):
                    for oy in range(rows):
                        m0 = (<Py_ssize_t>b * rows + oy) * out_w
                        dst = &cols_t[col, m0]
                        iy = (row0 + oy) * stride - pad_h + ky
                        if iy < 0 or iy >= h:
                            for ox in range(out_w):
                                dst[ox] = 0.0
                            continue
                        for ox in range(lo):
                            dst[ox] = 0.0
                        src = &x[b, ch, iy, 0]
                        for ox in range(lo, hi):
                            dst[ox] = src[ox * stride - pad_w + kx]
                        for ox in range(hi, out_w):
                            dst[ox] = 0.0


def conv2d_forward(x, weights, bias, int stride, int pad_h, int pad_w):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3]
    cdef int out_h = (h + 2 * pad_h - kh) // stride + 1
    cdef int out_w = (w + 2 * pad_w - kw) // stride + 1
    cdef int kc = c * kh * kw

    # (K, O) so the GEMM sees W in a transpose-friendly layout.
    w_fwd = np.ascontiguousarray(weights.reshape(o, -1).T, dtype=np.float64)
    out = np.empty((n, o, out_h, out_w), dtype=np.float32)
    if bias is None:
        bias = np.zeros(o, dtype=np.float32)

    cdef int strip = <int>max(1, min(out_h, STRIP_BUDGET // max(1, n * out_w * kc)))
    cdef int mstrip = n * strip * out_w
    cdef double[:, ::1] cols_t = np.empty((kc, mstrip), dtype=np.float64)
    cdef double[:, ::1] prod_t = np.empty((o, mstrip), dtype=np.float64)
    cdef double[:, ::1] wf = w_fwd
    cdef const float[:, :, :, ::1] xv = x
    cdef float[:, :, :, ::1] ov = out
    cdef const float[::1] bv = np.ascontiguousarray(bias, dtype=np.float32)
    cdef double alpha = 1.0, beta = 0.0, bias_c
    cdef char nt = b'N', tt = b'T'
    cdef int row0, rows, b, ch, oy, ox, mm, ldm
    cdef Py_ssize_t m0
    cdef double* pr
    cdef float* dst

    ldm = mstrip  # row length of the (K, M) buffers stays fixed across strips
    for row0 in range(0, out_h, strip):
        rows = min(strip, out_h - row0)
        mm = n * rows * out_w
        with nogil:
            _fill_cols_t(xv, cols_t, row0, rows, out_w, stride, pad_h, pad_w,
                         kh, kw)
            # col-major: prod(M,O) = cols(M,K) @ W(K,O)
            dgemm(&nt, &tt, &mm, &o, &kc, &alpha,
                  &cols_t[0, 0], &ldm, &wf[0, 0], &o, &beta, &prod_t[0, 0], &ldm)
            for ch in range(o):
                bias_c = bv[ch]
                for b in range(n):
                    for oy in range(rows):
                        m0 = (<Py_ssize_t>b * rows + oy) * out_w
                        pr = &prod_t[ch, m0]
                        dst = &ov[b, ch, row0 + oy, 0]
                        for ox in range(out_w):
                            dst[ox] = <float>(pr[ox] + bias_c)
    return out


def conv2d_backward(x, weights, int stride, int pad_h, int pad_w, grad_out,
                    bint with_bias):
    cdef int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int o = weights.shape[0], kh = weights.shape[2], kw = weights.shape[3]
    cdef int out_h = grad_out.shape[2], out_w = grad_out.shape[3]
    cdef int kc = c * kh * kw

    grad_bias = None
    if with_bias:
        grad_bias = grad_out.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)

    w_bwd = np.ascontiguousarray(weights.reshape(o, -1), dtype=np.float64)  # (O, K)
    gw = np.zeros((o, kc), dtype=np.float64)
    gx = np.zeros((n, c, h, w), dtype=np.float64)

    cdef int strip = <int>max(1, min(out_h, STRIP_BUDGET // max(1, n * out_w * kc)))
    cdef int mstrip = n * strip * out_w
    cdef double[:, ::1] cols_t = np.empty((kc, mstrip), dtype=np.float64)
    cdef double[:, ::1] go_t = np.empty((o, mstrip), dtype=np.float64)
    cdef double[:, ::1] gxcols_t = np.empty((kc, mstrip), dtype=np.float64)
    cdef double[:, ::1] wb = w_bwd
    cdef double[:, ::1] gwv = gw
    cdef const float[:, :, :, ::1] xv = x
    cdef const float[:, :, :, ::1] gov = grad_out
    cdef double[:, :, :, ::1] gxv = gx
    cdef double alpha = 1.0, beta0 = 0.0, beta1 = 1.0
    cdef char nt = b'N', tt = b'T'
    cdef int row0, rows, b, ch, oy, ox, ky, kx, iy, lo, hi, mm, ldm
    cdef Py_ssize_t m0, col
    cdef const float* gsrc
    cdef double* gdst
    cdef double* gxrow

    ldm = mstrip
    for row0 in range(0, out_h, strip):
        rows = min(strip, out_h - row0)
        mm = n * rows * out_w
        with nogil:
            _fill_cols_t(xv, cols_t, row0, rows, out_w, stride, pad_h, pad_w,
                         kh, kw)
            for ch in range(o):
                for b in range(n):
                    for oy in range(rows):
                        m0 = (<Py_ssize_t>b * rows + oy) * out_w
                        gdst = &go_t[ch, m0]
                        gsrc = &gov[b, ch, row0 + oy, 0]
                        for ox in range(out_w):
                            gdst[ox] = gsrc[ox]
            # col-major: GW(K,O) += cols^T(K,M) @ go(M,O)
            dgemm(&tt, &nt, &kc, &o, &mm, &alpha,
                  &cols_t[0, 0], &ldm, &go_t[0, 0], &ldm, &beta1, &gwv[0, 0], &kc)
            # col-major: gxcols(M,K) = go(M,O) @ W(O,K)
            dgemm(&nt, &tt, &mm, &kc, &o, &alpha,
                  &go_t[0, 0], &ldm, &wb[0, 0], &kc, &beta0, &gxcols_t[0, 0], &ldm)
            # col2im scatter; within one tap the targets are disjoint.
            for ch in range(c):
                for ky in range(kh):
                    for kx in range(kw):
                        col = (<Py_ssize_t>ch * kh + ky) * kw + kx
                        _valid_ox(out_w, stride, pad_w, kx, w, &lo, &hi)
                        for b in range(n):
                            for oy in range(rows):
                                iy = (row0 + oy) * stride - pad_h + ky
                                if iy < 0 or iy >= h:
                                    continue
                                m0 = (<Py_ssize_t>b * rows + oy) * out_w
                                gdst = &gxcols_t[col, m0]
                                gxrow = &gxv[b, ch, iy, 0]
                                for ox in range(lo, hi):
                                    gxrow[ox * stride - pad_w + kx] += gdst[ox]

    grad_weights = gw.reshape(o, c, kh, kw).astype(np.float32)
    return gx.astype(np.float32), grad_weights, grad_bias
