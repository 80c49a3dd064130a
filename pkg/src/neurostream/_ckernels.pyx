# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels. Signatures mirror neurostream._pykernels."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"

ctypedef fused real:
    float
    double


def sosfilt(const double[:, ::1] sos, x, double[:, :, ::1] zi):
    cdef double[:, ::1] y = np.array(x, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t nsec = sos.shape[0], nt = y.shape[0], nc = y.shape[1]
    cdef Py_ssize_t s, t, ch
    cdef double b0, b1, b2, a1, a2, xt, yt, z0, z1
    with nogil:
        for ch in range(nc):
            for s in range(nsec):
                b0 = sos[s, 0]; b1 = sos[s, 1]; b2 = sos[s, 2]
                a1 = sos[s, 3]; a2 = sos[s, 4]
                z0 = zi[s, 0, ch]
                z1 = zi[s, 1, ch]
                for t in range(nt):
                    xt = y[t, ch]
                    yt = b0 * xt + z0
                    z0 = b1 * xt - a1 * yt + z1
                    z1 = b2 * xt - a2 * yt
                    y[t, ch] = yt
                zi[s, 0, ch] = z0
                zi[s, 1, ch] = z1
    return np.asarray(y)


cdef void _vol2col(const real[:, :, :, :, ::1] xp, real[:, :, ::1] col,
                   Py_ssize_t kd, Py_ssize_t kh, Py_ssize_t kw,
                   Py_ssize_t sd, Py_ssize_t sh, Py_ssize_t sw,
                   Py_ssize_t od, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, k, row, a, b, e, l
    for n in range(xp.shape[0]):
        for c in range(xp.shape[1]):
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        row = ((c * kd + i) * kh + j) * kw + k
                        l = 0
                        for a in range(od):
                            for b in range(oh):
                                for e in range(ow):
                                    col[n, row, l] = xp[n, c, a * sd + i, b * sh + j, e * sw + k]
                                    l = l + 1


def vol2col(xp, kernel, stride, out_dims):
    xp = np.ascontiguousarray(xp)
    cdef Py_ssize_t kd = kernel[0], kh = kernel[1], kw = kernel[2]
    cdef Py_ssize_t od = out_dims[0], oh = out_dims[1], ow = out_dims[2]
    col = np.empty((xp.shape[0], xp.shape[1] * kd * kh * kw, od * oh * ow), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _vol2col[float](xp, col, kd, kh, kw, stride[0], stride[1], stride[2], od, oh, ow)
    else:
        _vol2col[double](xp, col, kd, kh, kw, stride[0], stride[1], stride[2], od, oh, ow)
    return col


cdef void _col2vol(const real[:, :, ::1] col, real[:, :, :, :, ::1] xp,
                   Py_ssize_t kd, Py_ssize_t kh, Py_ssize_t kw,
                   Py_ssize_t sd, Py_ssize_t sh, Py_ssize_t sw,
                   Py_ssize_t od, Py_ssize_t oh, Py_ssize_t ow) noexcept nogil:
    cdef Py_ssize_t n, c, i, j, k, row, a, b, e, l
    for n in range(xp.shape[0]):
        for c in range(xp.shape[1]):
            for i in range(kd):
                for j in range(kh):
                    for k in range(kw):
                        row = ((c * kd + i) * kh + j) * kw + k
                        l = 0
                        for a in range(od):
                            for b in range(oh):
                                for e in range(ow):
                                    xp[n, c, a * sd + i, b * sh + j, e * sw + k] += col[n, row, l]
                                    l = l + 1


def col2vol(col, padded_shape, kernel, stride, out_dims):
    col = np.ascontiguousarray(col)
    xp = np.zeros(padded_shape, dtype=col.dtype)
    if col.dtype == np.float32:
        _col2vol[float](col, xp, kernel[0], kernel[1], kernel[2],
                        stride[0], stride[1], stride[2], out_dims[0], out_dims[1], out_dims[2])
    else:
        _col2vol[double](col, xp, kernel[0], kernel[1], kernel[2],
                         stride[0], stride[1], stride[2], out_dims[0], out_dims[1], out_dims[2])
    return xp


cdef void _maxpool(const real[:, :, :, :, ::1] x, real[:, :, :, :, ::1] out, cnp.int64_t[:, :, :, :, ::1] idx,
                   Py_ssize_t kd, Py_ssize_t kh, Py_ssize_t kw,
                   Py_ssize_t sd, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t n, c, a, b, e, i, j, k, z, y, xx
    cdef Py_ssize_t h = x.shape[3], w = x.shape[4]
    cdef real best, v
    cdef cnp.int64_t where
    for n in range(out.shape[0]):
        for c in range(out.shape[1]):
            for a in range(out.shape[2]):
                for b in range(out.shape[3]):
                    for e in range(out.shape[4]):
                        where = -1
                        best = 0
                        for i in range(kd):
                            z = a * sd + i
                            for j in range(kh):
                                y = b * sh + j
                                for k in range(kw):
                                    xx = e * sw + k
                                    v = x[n, c, z, y, xx]
                                    if where < 0 or v > best:
                                        best = v
                                        where = (z * h + y) * w + xx
                        out[n, c, a, b, e] = best
                        idx[n, c, a, b, e] = where


def maxpool3d(x, kernel, stride, out_dims):
    x = np.ascontiguousarray(x)
    shape = x.shape[:2] + tuple(out_dims)
    out = np.empty(shape, dtype=x.dtype)
    idx = np.empty(shape, dtype=np.int64)
    if x.dtype == np.float32:
        _maxpool[float](x, out, idx, kernel[0], kernel[1], kernel[2], stride[0], stride[1], stride[2])
    else:
        _maxpool[double](x, out, idx, kernel[0], kernel[1], kernel[2], stride[0], stride[1], stride[2])
    return out, idx


def maxunpool3d(y, idx, out_spatial):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1]
    cdef Py_ssize_t vol = out_spatial[0] * out_spatial[1] * out_spatial[2]
    out = np.zeros((n * c, vol), dtype=y.dtype)
    cdef const cnp.int64_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.int64).reshape(n * c, -1)
    yy = np.ascontiguousarray(y).reshape(n * c, -1)
    cdef Py_ssize_t p, q
    if y.dtype == np.float32:
        _unpool[float](yy, ix, out)
    else:
        _unpool[double](yy, ix, out)
    return out.reshape((n, c) + tuple(out_spatial))


cdef void _unpool(const real[:, ::1] y, const cnp.int64_t[:, ::1] ix, real[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t p, q
    for p in range(y.shape[0]):
        for q in range(y.shape[1]):
            out[p, ix[p, q]] = y[p, q]
