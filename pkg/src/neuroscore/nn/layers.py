"""Forward/backward kernels for the fixed conv stack (NHWC layout).

Convolutions are 3x3 'valid' via im2col; pooling is 2x2 max with stride 2
(odd trailing rows/columns are dropped).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3(x):
    """(N, H, W, C) -> (N*(H-2)*(W-2), 9*C), columns ordered (ky, kx, c)."""
    win = sliding_window_view(x, (3, 3), axis=(1, 2))  # (N, Ho, Wo, C, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, 9 * x.shape[3])


def conv_forward(cols, w, b, out_shape):
    """``w`` has shape (3, 3, C, F); ``out_shape`` is (N, Ho, Wo)."""
    F = w.shape[-1]
    return (cols @ w.reshape(-1, F) + b).reshape(*out_shape, F)


def conv_backward(dout, cols, w, x_shape=None):
    """Gradients of a 3x3 valid conv. ``dx`` is skipped when ``x_shape`` is None."""
    F = w.shape[-1]
    d2 = dout.reshape(-1, F)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    if x_shape is None:
        return None, dw, db
    N, Ho, Wo, _ = dout.shape
    C = x_shape[3]
    dcols = (d2 @ w.reshape(-1, F).T).reshape(N, Ho, Wo, 3, 3, C)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dx[:, i:i + Ho, j:j + Wo, :] += dcols[:, :, :, i, j, :]
    return dx, dw, db


def maxpool_forward(x):
    H2, W2 = x.shape[1] // 2, x.shape[2] // 2
    a = x[:, 0:2 * H2:2, 0:2 * W2:2]
    b = x[:, 0:2 * H2:2, 1:2 * W2:2]
    c = x[:, 1:2 * H2:2, 0:2 * W2:2]
    d = x[:, 1:2 * H2:2, 1:2 * W2:2]
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def maxpool_backward(dout, x, out):
    # ties (flat clipped image regions) go to the first argmax only
    H2, W2 = out.shape[1], out.shape[2]
    dx = np.zeros(x.shape, dtype=dout.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for i in (0, 1):
        for j in (0, 1):
            hit = x[:, i:2 * H2:2, j:2 * W2:2] == out
            hit &= ~taken
            taken |= hit
            dx[:, i:2 * H2:2, j:2 * W2:2] = hit * dout
    return dx
