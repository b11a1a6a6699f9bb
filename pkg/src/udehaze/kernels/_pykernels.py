"""Pure-numpy reference kernels.

Always importable. The compiled module ``_ckernels`` exposes the same
functions with the same signatures and is preferred when it was built.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_output_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def im2col(x, kh, kw, stride, padding, dilation):
    """Unfold ``x`` (N, C, H, W) into columns of shape (N, C*kh*kw, Ho*Wo).

    Column rows are ordered (c, ki, kj), matching ``weight.reshape(O, -1)``.
    Out-of-bounds taps read zero.
    """
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for ki in range(kh):
        i0 = ki * dilation
        for kj in range(kw):
            j0 = kj * dilation
            cols[:, :, ki, kj] = xp[:, :, i0:i0 + stride * (ho - 1) + 1:stride,
                                    j0:j0 + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def col2im(cols, x_shape, kh, kw, stride, padding, dilation):
    """Adjoint of :func:`im2col`: scatter-add columns back into (N, C, H, W)."""
    n, c, h, w = x_shape
    ho = conv_output_size(h, kh, stride, padding, dilation)
    wo = conv_output_size(w, kw, stride, padding, dilation)
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=np.float64)
    for ki in range(kh):
        i0 = ki * dilation
        for kj in range(kw):
            j0 = kj * dilation
            xp[:, :, i0:i0 + stride * (ho - 1) + 1:stride,
               j0:j0 + stride * (wo - 1) + 1:stride] += cols[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, padding:padding + h, padding:padding + w])


def min_filter2d(img, size):
    """Square min filter on a 2-D array with replicated borders."""
    r = size // 2
    padded = np.pad(img, r, mode="edge")
    rows = sliding_window_view(padded, size, axis=1).min(axis=-1)
    return np.ascontiguousarray(sliding_window_view(rows, size, axis=0).min(axis=-1))
