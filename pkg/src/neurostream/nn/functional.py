"""Forward/backward pairs for the layer set the autoencoder needs.

Each ``*_forward`` returns its output plus a :class:`Context`; the matching
``*_backward`` consumes that context exactly once. Tensors are plain numpy arrays,
laid out (N, C, D, H, W) for volumes and (N, F) for vectors.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ContextMismatch, DegenerateBatch, IndexOutOfWindow, ShapeMismatch


class Context:
    __slots__ = ("op", "saved", "used")

    def __init__(self, op: str, **saved):
        self.op = op
        self.saved = saved
        self.used = False

    def take(self, op: str) -> dict:
        if self.op != op:
            raise ContextMismatch(f"{op} backward given a context saved by {self.op}")
        if self.used:
            raise ContextMismatch(f"{op} context already consumed by an earlier backward")
        self.used = True
        saved, self.saved = self.saved, {}
        return saved


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ShapeMismatch(f"expected 3 values, got {v}")
    return v


def conv_out_dims(spatial, kernel, stride, padding):
    out = []
    for n, k, s, p in zip(spatial, kernel, stride, padding):
        span = n + 2 * p - k
        if span < 0:
            raise ShapeMismatch(f"padded extent {n + 2 * p} smaller than kernel {k}")
        out.append(span // s + 1)
    return tuple(out)


def _pad(x, padding):
    if not any(padding):
        return x
    pd, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def _crop(x, padding):
    pd, ph, pw = padding
    d, h, w = x.shape[2:]
    return x[:, :, pd : d - pd, ph : h - ph, pw : w - pw]


def _check_grad(name, g, shape):
    if g.shape != tuple(shape):
        raise ContextMismatch(f"{name}: upstream gradient shape {g.shape} != output shape {tuple(shape)}")


# -- convolution -----------------------------------------------------------

def conv3d_forward(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of (N, Cin, D, H, W) input with (Cout, Cin, kD, kH, kW) weights."""
    stride, padding = _triple(stride), _triple(padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ShapeMismatch(f"conv3d needs 5-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    kernel = weight.shape[2:]
    out_dims = conv_out_dims(x.shape[2:], kernel, stride, padding)
    xp = _pad(x, padding)
    col = kernels.vol2col(xp, kernel, stride, out_dims)
    wm = weight.reshape(weight.shape[0], -1)
    y = np.matmul(wm, col)
    if bias is not None:
        y += bias.reshape(1, -1, 1)
    y = y.reshape((x.shape[0], weight.shape[0]) + out_dims)
    ctx = Context("conv3d", col=col, weight=weight, has_bias=bias is not None,
                  padded_shape=xp.shape, stride=stride, padding=padding, out_shape=y.shape)
    return y, ctx


def conv3d_backward(ctx: Context, grad_out):
    """Returns (grad_input, grad_weight, grad_bias); grad_bias is None without a bias."""
    s = ctx.take("conv3d")
    _check_grad("conv3d", grad_out, s["out_shape"])
    w = s["weight"]
    n, cout = grad_out.shape[:2]
    g = grad_out.reshape(n, cout, -1)
    col = s["col"]
    grad_w = np.tensordot(g, col, axes=([0, 2], [0, 2])).reshape(w.shape)
    grad_b = g.sum(axis=(0, 2)) if s["has_bias"] else None
    gcol = np.matmul(w.reshape(cout, -1).T, g)
    xp = kernels.col2vol(gcol, s["padded_shape"], w.shape[2:], s["stride"], s["out_shape"][2:])
    return _crop(xp, s["padding"]), grad_w.astype(w.dtype, copy=False), grad_b


def conv_transpose_out_dims(spatial, kernel, stride, padding, output_padding):
    out = []
    for n, k, s, p, op in zip(spatial, kernel, stride, padding, output_padding):
        if op >= max(s, 1) and op > 0:
            raise ShapeMismatch(f"output padding {op} must be smaller than stride {s}")
        o = (n - 1) * s - 2 * p + k + op
        if o < 1:
            raise ShapeMismatch(f"transposed convolution output extent {o} < 1")
        out.append(o)
    return tuple(out)


def conv3d_transpose_forward(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of conv3d. ``weight`` is (Cin, Cout, kD, kH, kW)."""
    stride, padding, output_padding = _triple(stride), _triple(padding), _triple(output_padding)
    if x.ndim != 5 or weight.ndim != 5:
        raise ShapeMismatch(f"conv3d_transpose needs 5-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} channels, weight expects {weight.shape[0]}")
    n, cin = x.shape[:2]
    cout = weight.shape[1]
    kernel = weight.shape[2:]
    in_dims = x.shape[2:]
    out_dims = conv_transpose_out_dims(in_dims, kernel, stride, padding, output_padding)
    padded = (n, cout) + tuple(o + 2 * p for o, p in zip(out_dims, padding))
    wm = weight.reshape(cin, -1)
    xf = x.reshape(n, cin, -1)
    col = np.matmul(wm.T, xf)
    yp = kernels.col2vol(col, padded, kernel, stride, in_dims)
    y = np.ascontiguousarray(_crop(yp, padding))
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1, 1)
    ctx = Context("conv3d_transpose", x=x, weight=weight, has_bias=bias is not None,
                  stride=stride, padding=padding, out_shape=y.shape)
    return y, ctx


def conv3d_transpose_backward(ctx: Context, grad_out):
    s = ctx.take("conv3d_transpose")
    _check_grad("conv3d_transpose", grad_out, s["out_shape"])
    x, w = s["x"], s["weight"]
    n, cin = x.shape[:2]
    gp = _pad(grad_out, s["padding"])
    col = kernels.vol2col(gp, w.shape[2:], s["stride"], x.shape[2:])
    grad_x = np.matmul(w.reshape(cin, -1), col).reshape(x.shape)
    grad_w = np.tensordot(x.reshape(n, cin, -1), col, axes=([0, 2], [0, 2])).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3, 4)) if s["has_bias"] else None
    return grad_x, grad_w.astype(w.dtype, copy=False), grad_b


# -- pooling ---------------------------------------------------------------

def maxpool3d(x, kernel=2, stride=None, pad_end=0):
    """Max pool with optional zero padding appended to the end of each spatial axis.

    Returns (pooled, indices, ctx). Indices are flat offsets into the padded volume.
    """
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    pad_end = _triple(pad_end)
    if any(pad_end):
        x_p = np.pad(x, ((0, 0), (0, 0)) + tuple((0, p) for p in pad_end))
    else:
        x_p = x
    out_dims = conv_out_dims(x_p.shape[2:], kernel, stride, (0, 0, 0))
    y, idx = kernels.maxpool3d(np.ascontiguousarray(x_p), kernel, stride, out_dims)
    ctx = Context("maxpool3d", idx=idx, in_shape=x.shape, padded_spatial=x_p.shape[2:],
                  kernel=kernel, stride=stride, out_shape=y.shape)
    return y, idx, ctx


def check_pool_indices(idx, padded_spatial, kernel, stride):
    """Raise IndexOutOfWindow unless every index lies inside its own pooling window."""
    d, h, w = padded_spatial
    idx = np.asarray(idx)
    if idx.ndim != 5:
        raise ShapeMismatch(f"pool indices must be 5-D, got {idx.shape}")
    z, rem = np.divmod(idx, h * w)
    yy, xx = np.divmod(rem, w)
    od, oh, ow = idx.shape[2:]
    a = np.arange(od).reshape(-1, 1, 1) * stride[0]
    b = np.arange(oh).reshape(1, -1, 1) * stride[1]
    e = np.arange(ow).reshape(1, 1, -1) * stride[2]
    ok = (
        (idx >= 0) & (idx < d * h * w)
        & (z >= a) & (z < a + kernel[0])
        & (yy >= b) & (yy < b + kernel[1])
        & (xx >= e) & (xx < e + kernel[2])
    )
    if not np.all(ok):
        bad = tuple(int(i) for i in np.argwhere(~ok)[0])
        raise IndexOutOfWindow(f"pool index {int(idx[bad])} at output cell {bad} is outside its window")


def _scatter(values, idx, spatial, overlapping):
    if not overlapping:
        return kernels.maxunpool3d(np.ascontiguousarray(values), idx, spatial)
    n, c = values.shape[:2]
    vol = int(np.prod(spatial))
    out = np.zeros((n * c, vol), dtype=values.dtype)
    rows = np.repeat(np.arange(n * c), idx[0, 0].size)
    np.add.at(out, (rows, idx.reshape(-1)), values.reshape(-1))
    return out.reshape((n, c) + tuple(spatial))


def maxpool3d_backward(ctx: Context, grad_out):
    s = ctx.take("maxpool3d")
    _check_grad("maxpool3d", grad_out, s["out_shape"])
    overlapping = any(k > st for k, st in zip(s["kernel"], s["stride"]))
    g = _scatter(grad_out, s["idx"], s["padded_spatial"], overlapping)
    d, h, w = s["in_shape"][2:]
    return np.ascontiguousarray(g[:, :, :d, :h, :w])


def maxunpool3d(pooled, indices, output_spatial, kernel=2, stride=None, validate=True):
    """Place each pooled value at its argmax offset in a zero volume of ``output_spatial``."""
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    output_spatial = tuple(int(v) for v in output_spatial)
    if pooled.shape != indices.shape:
        raise ShapeMismatch(f"pooled shape {pooled.shape} != indices shape {indices.shape}")
    if validate:
        check_pool_indices(indices, output_spatial, kernel, stride)
    overlapping = any(k > st for k, st in zip(kernel, stride))
    y = _scatter(pooled, indices, output_spatial, overlapping)
    return y, Context("maxunpool3d", idx=indices, out_shape=y.shape)


def maxunpool3d_backward(ctx: Context, grad_out):
    s = ctx.take("maxunpool3d")
    _check_grad("maxunpool3d", grad_out, s["out_shape"])
    idx = s["idx"]
    n, c = idx.shape[:2]
    g = grad_out.reshape(n, c, -1)
    return np.take_along_axis(g, idx.reshape(n, c, -1), axis=2).reshape(idx.shape)


# -- normalisation, activations, affine ------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, training,
                      momentum=0.1, eps=1e-5):
    """Per-channel normalisation over batch and spatial axes.

    In training mode the running statistics are updated in place.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        count = x.size // x.shape[1]
        if x.shape[0] < 2:
            raise DegenerateBatch("batch norm in training mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = xhat * gamma.reshape(shape) + beta.reshape(shape)
    y = y.astype(x.dtype, copy=False)
    ctx = Context("batchnorm", xhat=xhat, inv_std=inv_std, gamma=gamma,
                  training=training, out_shape=y.shape)
    return y, ctx


def batchnorm_backward(ctx: Context, grad_out):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    s = ctx.take("batchnorm")
    _check_grad("batchnorm", grad_out, s["out_shape"])
    xhat, inv_std, gamma = s["xhat"], s["inv_std"], s["gamma"]
    axes = (0,) + tuple(range(2, grad_out.ndim))
    shape = (1, -1) + (1,) * (grad_out.ndim - 2)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    scale = (gamma * inv_std).reshape(shape)
    if s["training"]:
        m = grad_out.size // grad_out.shape[1]
        grad_x = scale / m * (
            m * grad_out - grad_beta.reshape(shape) - xhat * grad_gamma.reshape(shape)
        )
    else:
        grad_x = grad_out * scale
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def relu_forward(x):
    mask = x > 0
    return np.where(mask, x, 0).astype(x.dtype, copy=False), Context("relu", mask=mask, out_shape=x.shape)


def relu_backward(ctx: Context, grad_out):
    s = ctx.take("relu")
    _check_grad("relu", grad_out, s["out_shape"])
    return np.where(s["mask"], grad_out, 0).astype(grad_out.dtype, copy=False)


def relu(x):
    return relu_forward(np.asarray(x))[0]


def linear_forward(x, weight, bias=None):
    """y = x @ weight.T + bias with weight shaped (out_features, in_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    # batched matvec keeps each row's arithmetic independent of the batch size
    y = np.matmul(weight, x[:, :, None])[:, :, 0]
    if bias is not None:
        y += bias
    return y, Context("linear", x=x, weight=weight, has_bias=bias is not None, out_shape=y.shape)


def linear_backward(ctx: Context, grad_out):
    s = ctx.take("linear")
    _check_grad("linear", grad_out, s["out_shape"])
    x, w = s["x"], s["weight"]
    grad_x = grad_out @ w
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0) if s["has_bias"] else None
    return grad_x, grad_w, grad_b


# -- loss ------------------------------------------------------------------

def mse_loss(x, x_tilde, reduction="sum"):
    """Squared reconstruction error ``||x - x_tilde||^2``; ``mean`` divides by the element count.

    Returns (loss, ctx); backward gives the gradient with respect to ``x_tilde``.
    """
    x = np.asarray(x)
    x_tilde = np.asarray(x_tilde)
    if x.shape != x_tilde.shape:
        raise ShapeMismatch(f"mse_loss shapes differ: {x.shape} vs {x_tilde.shape}")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    diff = x_tilde.astype(np.float64) - x
    loss = float(np.sum(diff * diff))
    if reduction == "mean":
        loss /= diff.size
    return loss, Context("mse", diff=diff, reduction=reduction, dtype=x_tilde.dtype)


def mse_backward(ctx: Context, grad_out=1.0):
    s = ctx.take("mse")
    g = 2.0 * s["diff"] * grad_out
    if s["reduction"] == "mean":
        g /= s["diff"].size
    return g.astype(s["dtype"], copy=False)
