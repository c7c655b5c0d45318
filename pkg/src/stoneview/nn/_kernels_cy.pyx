# Compiled twins of the kernels in _kernels_py.py. Same signatures, same
# layout contract; single pass per kernel, no padded temporaries.

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if floating is float:
        out_np = np.empty((b * oh * ow, c * kh * kw), dtype=np.float32)
    else:
        out_np = np.empty((b * oh * ow, c * kh * kw), dtype=np.float64)
    cdef floating[:, ::1] out = out_np
    cdef Py_ssize_t bb, io, jo, cc, i, j, hh, ww, row, col
    with nogil:
        for bb in range(b):
            for io in range(oh):
                for jo in range(ow):
                    row = (bb * oh + io) * ow + jo
                    col = 0
                    for cc in range(c):
                        for i in range(kh):
                            hh = io * stride - pad + i
                            for j in range(kw):
                                ww = jo * stride - pad + j
                                if 0 <= hh < h and 0 <= ww < w:
                                    out[row, col] = x[bb, cc, hh, ww]
                                else:
                                    out[row, col] = 0
                                col += 1
    return out_np


def col2im(floating[:, ::1] cols, x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if floating is float:
        dx_np = np.zeros((b, c, h, w), dtype=np.float32)
    else:
        dx_np = np.zeros((b, c, h, w), dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t bb, io, jo, cc, i, j, hh, ww, row, col
    with nogil:
        for bb in range(b):
            for io in range(oh):
                for jo in range(ow):
                    row = (bb * oh + io) * ow + jo
                    col = 0
                    for cc in range(c):
                        for i in range(kh):
                            hh = io * stride - pad + i
                            for j in range(kw):
                                ww = jo * stride - pad + j
                                if 0 <= hh < h and 0 <= ww < w:
                                    dx[bb, cc, hh, ww] += cols[row, col]
                                col += 1
    return dx_np


def maxpool2d_forward(floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    if floating is float:
        y_np = np.empty((b, c, oh, ow), dtype=np.float32)
    else:
        y_np = np.empty((b, c, oh, ow), dtype=np.float64)
    idx_np = np.zeros((b, c, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, ::1] y = y_np
    cdef long long[:, :, :, ::1] idx = idx_np
    cdef Py_ssize_t bb, cc, io, jo, i, j, hh, ww
    cdef floating best, v
    cdef long long best_t
    cdef bint seen
    with nogil:
        for bb in range(b):
            for cc in range(c):
                for io in range(oh):
                    for jo in range(ow):
                        seen = False
                        best = 0
                        best_t = 0
                        for i in range(k):
                            hh = io * stride - pad + i
                            if hh < 0 or hh >= h:
                                continue
                            for j in range(k):
                                ww = jo * stride - pad + j
                                if ww < 0 or ww >= w:
                                    continue
                                v = x[bb, cc, hh, ww]
                                if not seen or v > best:
                                    best = v
                                    best_t = i * k + j
                                    seen = True
                        y[bb, cc, io, jo] = best
                        idx[bb, cc, io, jo] = best_t
    return y_np, idx_np


def maxpool2d_backward(floating[:, :, :, ::1] dy, long long[:, :, :, ::1] idx,
                       x_shape, int k, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = dy.shape[2], ow = dy.shape[3]
    if floating is float:
        dx_np = np.zeros((b, c, h, w), dtype=np.float32)
    else:
        dx_np = np.zeros((b, c, h, w), dtype=np.float64)
    cdef floating[:, :, :, ::1] dx = dx_np
    cdef Py_ssize_t bb, cc, io, jo, i, j, hh, ww
    cdef long long t
    with nogil:
        for bb in range(b):
            for cc in range(c):
                for io in range(oh):
                    for jo in range(ow):
                        t = idx[bb, cc, io, jo]
                        i = t // k
                        j = t % k
                        hh = io * stride - pad + i
                        ww = jo * stride - pad + j
                        if 0 <= hh < h and 0 <= ww < w:
                            dx[bb, cc, hh, ww] += dy[bb, cc, io, jo]
    return dx_np
