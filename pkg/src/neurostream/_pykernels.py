"""Numpy implementations of the hot kernels; used when the compiled module is unavailable."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def sosfilt(sos, x, zi):
    """Run a biquad cascade over ``x`` (T, C) in transposed direct form II.

    ``sos`` is (S, 5) rows of b0 b1 b2 a1 a2, ``zi`` is (S, 2, C) and is updated in place.
    """
    y = np.array(x, dtype=np.float64, copy=True)
    for s in range(sos.shape[0]):
        b0, b1, b2, a1, a2 = sos[s]
        z0 = zi[s, 0]
        z1 = zi[s, 1]
        for t in range(y.shape[0]):
            xt = y[t].copy()
            yt = b0 * xt + z0
            z0[:] = b1 * xt - a1 * yt + z1
            z1[:] = b2 * xt - a2 * yt
            y[t] = yt
    return y


def vol2col(xp, kernel, stride, out_dims):
    n, c = xp.shape[:2]
    kd, kh, kw = kernel
    sd, sh, sw = stride
    od, oh, ow = out_dims
    win = sliding_window_view(xp, (kd, kh, kw), axis=(2, 3, 4))
    win = win[:, :, : sd * (od - 1) + 1 : sd, : sh * (oh - 1) + 1 : sh, : sw * (ow - 1) + 1 : sw]
    # (N, C, od, oh, ow, kd, kh, kw) -> (N, C, kd, kh, kw, od, oh, ow)
    win = win.transpose(0, 1, 5, 6, 7, 2, 3, 4)
    return np.ascontiguousarray(win).reshape(n, c * kd * kh * kw, od * oh * ow)


def col2vol(col, padded_shape, kernel, stride, out_dims):
    n, c = padded_shape[:2]
    kd, kh, kw = kernel
    sd, sh, sw = stride
    od, oh, ow = out_dims
    xp = np.zeros(padded_shape, dtype=col.dtype)
    col = col.reshape(n, c, kd, kh, kw, od, oh, ow)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                xp[:, :, i : i + sd * od : sd, j : j + sh * oh : sh, k : k + sw * ow : sw] += col[:, :, i, j, k]
    return xp


def maxpool3d(x, kernel, stride, out_dims):
    """Max over each window; indices are flat offsets into the D*H*W volume of ``x``."""
    n, c, d, h, w = x.shape
    kd, kh, kw = kernel
    od, oh, ow = out_dims
    col = vol2col(x.reshape(n * c, 1, d, h, w), kernel, stride, out_dims)
    col = col.reshape(n * c, kd * kh * kw, od * oh * ow)
    arg = np.argmax(col, axis=1)
    out = np.take_along_axis(col, arg[:, None, :], axis=1)[:, 0, :]
    # window-local (i, j, k) -> absolute position
    ki, rem = np.divmod(arg, kh * kw)
    kj, kk = np.divmod(rem, kw)
    pd, rem = np.divmod(np.arange(od * oh * ow), oh * ow)
    ph, pw = np.divmod(rem, ow)
    sd, sh, sw = stride
    zi = pd * sd + ki
    yi = ph * sh + kj
    xi = pw * sw + kk
    idx = (zi * h + yi) * w + xi
    return out.reshape(n, c, od, oh, ow), idx.reshape(n, c, od, oh, ow).astype(np.int64)


def maxunpool3d(y, idx, out_spatial):
    n, c = y.shape[:2]
    vol = int(np.prod(out_spatial))
    out = np.zeros((n * c, vol), dtype=y.dtype)
    np.put_along_axis(out, idx.reshape(n * c, -1), y.reshape(n * c, -1), axis=1)
    return out.reshape((n, c) + tuple(out_spatial))
