"""Pure numpy implementations of the hot kernels.

Layout contract (shared with the compiled twin in ``_kernels_cy.pyx``):

* ``im2col(x, kh, kw, stride, pad)`` takes ``x`` of shape (B, C, H, W) and
  returns (B*OH*OW, C*kh*kw) where the row index runs b-major then oh then
  ow, and the column index runs c-major then i (kernel row) then j.
* ``col2im`` is the adjoint scatter-add back to (B, C, H, W).
* ``maxpool2d_forward`` returns the pooled map plus the flat within-window
  argmax (i*kw + j) needed by the backward scatter.

Out-of-bounds taps (zero padding) read as 0 on the way in and are dropped on
the way back.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_size(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    b, c, h, w = x.shape
    oh, ow = _out_size(h, w, kh, kw, stride, pad)
    if pad:
        xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, oh, ow, c, kh, kw),
        strides=(sb, sh * stride, sw * stride, sc, sh, sw),
    )
    return view.reshape(b * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    oh, ow = _out_size(h, w, kh, kw, stride, pad)
    # One big transpose up front so the k*k accumulation loop below adds
    # contiguous (B, C, OH, OW) slabs without per-step copies.
    cols6 = np.ascontiguousarray(
        cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    )
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        hi = i + stride * oh
        for j in range(kw):
            wj = j + stride * ow
            dxp[:, :, i:hi:stride, j:wj:stride] += cols6[:, :, i, j]
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w].copy()
    return dxp


def maxpool2d_forward(x, k, stride, pad):
    x = np.ascontiguousarray(x)
    b, c, h, w = x.shape
    oh, ow = _out_size(h, w, k, k, stride, pad)
    if pad:
        fill = np.finfo(x.dtype).min
        xp = np.full((b, c, h + 2 * pad, w + 2 * pad), fill, dtype=x.dtype)
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, c, oh, ow, k, k),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
    )
    windows = view.reshape(b, c, oh, ow, k * k)
    idx = np.argmax(windows, axis=4).astype(np.int64)
    y = np.take_along_axis(windows, idx[..., None], axis=4)[..., 0]
    return y, idx


def maxpool2d_backward(dy, idx, x_shape, k, stride, pad):
    b, c, h, w = x_shape
    oh, ow = _out_size(h, w, k, k, stride, pad)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dy.dtype)
    for t in range(k * k):
        i, j = divmod(t, k)
        mask = idx == t
        if not mask.any():
            continue
        dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += (
            dy * mask
        )
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w].copy()
    return dxp
