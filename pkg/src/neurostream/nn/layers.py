"""Stateful layers wrapping the functional ops: parameters, gradient buffers, saved context."""
from __future__ import annotations

import numpy as np

from . import functional as F
from ..errors import ContextMismatch


class Layer:
    """Base layer. Subclasses fill ``params`` and implement ``_forward``/``_backward``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self._ctx = None

    def forward(self, x):
        out, self._ctx = self._forward(x)
        return out

    __call__ = forward

    def backward(self, grad_out):
        if self._ctx is None:
            raise ContextMismatch(f"{type(self).__name__}.backward called without a pending forward")
        ctx, self._ctx = self._ctx, None
        return self._backward(ctx, grad_out)

    def _accumulate(self, name, g):
        if g is None:
            return
        self.grads[name] += g.astype(self.grads[name].dtype, copy=False)

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def _init_grads(self):
        self.zero_grad()

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)


def _uniform(rng, shape, bound, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv3d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=1, *, rng, dtype=np.float32):
        super().__init__()
        k = F._triple(kernel)
        self.stride, self.padding = F._triple(stride), F._triple(padding)
        fan_in = in_ch * k[0] * k[1] * k[2]
        # He-style uniform bound for ReLU networks
        self.params["weight"] = _uniform(rng, (out_ch, in_ch) + k, np.sqrt(6.0 / fan_in), dtype)
        self.params["bias"] = _uniform(rng, (out_ch,), 1.0 / np.sqrt(fan_in), dtype)
        self._init_grads()

    def _forward(self, x):
        return F.conv3d_forward(x, self.params["weight"], self.params["bias"], self.stride, self.padding)

    def _backward(self, ctx, g):
        gx, gw, gb = F.conv3d_backward(ctx, g)
        self._accumulate("weight", gw)
        self._accumulate("bias", gb)
        return gx


class ConvTranspose3d(Layer):
    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=1, output_padding=0, *,
                 rng, dtype=np.float32, gain=np.sqrt(6.0)):
        super().__init__()
        k = F._triple(kernel)
        self.stride, self.padding = F._triple(stride), F._triple(padding)
        self.output_padding = F._triple(output_padding)
        # each output cell sums over in_ch * prod(kernel / stride) inputs
        fan_in = in_ch * k[0] * k[1] * k[2] / np.prod(self.stride)
        self.params["weight"] = _uniform(rng, (in_ch, out_ch) + k, gain / np.sqrt(fan_in), dtype)
        self.params["bias"] = _uniform(rng, (out_ch,), 1.0 / np.sqrt(fan_in), dtype)
        self._init_grads()

    def _forward(self, x):
        return F.conv3d_transpose_forward(x, self.params["weight"], self.params["bias"],
                                          self.stride, self.padding, self.output_padding)

    def _backward(self, ctx, g):
        gx, gw, gb = F.conv3d_transpose_backward(ctx, g)
        self._accumulate("weight", gw)
        self._accumulate("bias", gb)
        return gx


class BatchNorm(Layer):
    def __init__(self, channels, momentum=0.1, eps=1e-5, *, dtype=np.float32):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._init_grads()

    def _forward(self, x):
        return F.batchnorm_forward(x, self.params["gamma"], self.params["beta"],
                                   self.buffers["running_mean"], self.buffers["running_var"],
                                   self.training, self.momentum, self.eps)

    def _backward(self, ctx, g):
        gx, gg, gb = F.batchnorm_backward(ctx, g)
        self._accumulate("gamma", gg)
        self._accumulate("beta", gb)
        return gx


class ReLU(Layer):
    def _forward(self, x):
        return F.relu_forward(x)

    def _backward(self, ctx, g):
        return F.relu_backward(ctx, g)


class Linear(Layer):
    def __init__(self, in_features, out_features, *, rng, dtype=np.float32, gain=np.sqrt(3.0)):
        super().__init__()
        self.params["weight"] = _uniform(rng, (out_features, in_features), gain / np.sqrt(in_features), dtype)
        self.params["bias"] = _uniform(rng, (out_features,), 1.0 / np.sqrt(in_features), dtype)
        self._init_grads()

    def _forward(self, x):
        return F.linear_forward(x, self.params["weight"], self.params["bias"])

    def _backward(self, ctx, g):
        gx, gw, gb = F.linear_backward(ctx, g)
        self._accumulate("weight", gw)
        self._accumulate("bias", gb)
        return gx


class MaxPool3d(Layer):
    """Pooling that also exposes the argmax indices of its last forward as ``indices``."""

    def __init__(self, kernel=2, stride=None, pad_end=0):
        super().__init__()
        self.kernel = F._triple(kernel)
        self.stride = self.kernel if stride is None else F._triple(stride)
        self.pad_end = F._triple(pad_end)
        self.indices = None

    def _forward(self, x):
        y, self.indices, ctx = F.maxpool3d(x, self.kernel, self.stride, self.pad_end)
        return y, ctx

    def _backward(self, ctx, g):
        return F.maxpool3d_backward(ctx, g)


class MaxUnpool3d(Layer):
    """Inverse of MaxPool3d; ``forward(x, indices)`` then crops ``crop_end`` from each axis."""

    def __init__(self, output_spatial, kernel=2, stride=None, crop_end=0):
        super().__init__()
        self.output_spatial = tuple(output_spatial)
        self.kernel = F._triple(kernel)
        self.stride = self.kernel if stride is None else F._triple(stride)
        self.crop_end = F._triple(crop_end)

    def forward(self, x, indices):
        y, ctx = F.maxunpool3d(x, indices, self.output_spatial, self.kernel, self.stride)
        self._ctx = ctx
        d, h, w = (n - c for n, c in zip(self.output_spatial, self.crop_end))
        return np.ascontiguousarray(y[:, :, :d, :h, :w])

    __call__ = forward

    def _backward(self, ctx, g):
        if any(self.crop_end):
            full = np.zeros(g.shape[:2] + self.output_spatial, dtype=g.dtype)
            d, h, w = g.shape[2:]
            full[:, :, :d, :h, :w] = g
            g = full
        return F.maxunpool3d_backward(ctx, g)


class Reshape(Layer):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def _forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, grad_out):
        if self._ctx is None:
            raise ContextMismatch("Reshape.backward called without a pending forward")
        shape, self._ctx = self._ctx, None
        return grad_out.reshape(shape)
