"""Trainable layers with explicit forward/backward passes on NCHW arrays.

Every layer keeps the activations its backward pass needs from the most
recent ``forward(x, train=True)`` call.  Vectors travel as ``(n, c, 1, 1)``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..spconv import SPConvParams, init_params, spconv_backward, spconv_forward
from ..tensor import ConvGeom, conv2d, conv2d_backward, conv_output_size


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=True, skip=None):
        raise NotImplementedError

    def backward(self, dy):
        """Return the input gradient, or ``(dx, dskip)`` for two-input layers."""
        raise NotImplementedError

    def astype(self, dtype):
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv(Layer):
    def __init__(self, cin, cout, k, stride, padding, groups, rng, dtype):
        super().__init__()
        self.geom = ConvGeom(stride, padding, groups)
        fan_in = cin // groups * k * k
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (cout, cin // groups, k, k))
        self.params["w"] = w.astype(dtype)
        self.grads["w"] = np.zeros_like(self.params["w"])

    def forward(self, x, train=True, skip=None):
        self.x = x
        return conv2d(x, self.params["w"], self.geom)

    def backward(self, dy):
        dx, self.grads["w"] = conv2d_backward(self.x, self.params["w"], self.geom, dy)
        return dx


class SPConv(Layer):
    def __init__(self, config, rng, dtype):
        super().__init__()
        self.config = config
        seed = int(rng.integers(2**63 - 1))
        self.params.update(init_params(config, seed, dtype).blocks())
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _p(self):
        return SPConvParams(**self.params)

    def forward(self, x, train=True, skip=None):
        y, self.cache = spconv_forward(x, self._p(), self.config)
        return y

    def backward(self, dy):
        dx, g = spconv_backward(self.cache, dy, self._p(), self.config)
        self.grads = g.blocks()
        return dx


class BatchNorm(Layer):
    def __init__(self, c, dtype, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.params["weight"] = np.ones(c, dtype)
        self.params["bias"] = np.zeros(c, dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype)
        self.buffers["running_var"] = np.ones(c, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, train=True, skip=None):
        gamma = self.params["weight"][None, :, None, None]
        beta = self.params["bias"][None, :, None, None]
        if not train:
            mean = self.buffers["running_mean"][None, :, None, None]
            var = self.buffers["running_var"][None, :, None, None]
            return (x - mean) / np.sqrt(var + self.eps) * gamma + beta
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        count = x.size // x.shape[1]
        m = self.momentum
        self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean.ravel()
        unbiased = var.ravel() * (count / max(count - 1, 1))
        self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean) * self.inv_std
        return self.xhat * gamma + beta

    def backward(self, dy):
        gamma = self.params["weight"][None, :, None, None]
        self.grads["weight"] = np.sum(dy * self.xhat, axis=(0, 2, 3))
        self.grads["bias"] = np.sum(dy, axis=(0, 2, 3))
        dxhat = dy * gamma
        return self.inv_std * (
            dxhat
            - dxhat.mean(axis=(0, 2, 3), keepdims=True)
            - self.xhat * np.mean(dxhat * self.xhat, axis=(0, 2, 3), keepdims=True)
        )


class ReLU(Layer):
    def forward(self, x, train=True, skip=None):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dy):
        return dy * self.mask


class Pool(Layer):
    def __init__(self, k, stride, padding, mode):
        super().__init__()
        self.k, self.s, self.p, self.mode = k, stride, padding, mode

    def forward(self, x, train=True, skip=None):
        k, s, p = self.k, self.s, self.p
        n, c, h, w = x.shape
        ho = conv_output_size(h, k, s, p)
        wo = conv_output_size(w, k, s, p)
        fill = -np.inf if self.mode == "max" else 0.0
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=fill) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]
        self.in_shape, self.out_hw = x.shape, (ho, wo)
        if self.mode == "max":
            flat = win.reshape(n, c, ho, wo, k * k)
            self.arg = flat.argmax(axis=-1)
            return np.take_along_axis(flat, self.arg[..., None], axis=-1)[..., 0]
        # zero padding is counted in the average
        return win.mean(axis=(-2, -1))

    def backward(self, dy):
        k, s, p = self.k, self.s, self.p
        n, c, h, w = self.in_shape
        ho, wo = self.out_hw
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                if self.mode == "max":
                    contrib = dy * (self.arg == i * k + j)
                else:
                    contrib = dy / (k * k)
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += contrib
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class GapHead(Layer):
    def forward(self, x, train=True, skip=None):
        self.in_shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, dy):
        n, c, h, w = self.in_shape
        return np.broadcast_to(dy / (h * w), self.in_shape).copy()


class Linear(Layer):
    def __init__(self, cin, cout, bias, rng, dtype):
        super().__init__()
        bound = 1.0 / math.sqrt(cin)
        self.params["w"] = rng.uniform(-bound, bound, (cout, cin)).astype(dtype)
        if bias:
            self.params["b"] = rng.uniform(-bound, bound, cout).astype(dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, train=True, skip=None):
        self.x = x.reshape(x.shape[0], -1)
        y = self.x @ self.params["w"].T
        if "b" in self.params:
            y = y + self.params["b"]
        return y[:, :, None, None]

    def backward(self, dy):
        dy = dy.reshape(dy.shape[0], -1)
        self.grads["w"] = dy.T @ self.x
        if "b" in self.params:
            self.grads["b"] = dy.sum(axis=0)
        return (dy @ self.params["w"])[:, :, None, None]


class Add(Layer):
    """Residual join. ``pad`` mode subsamples the skip and zero-fills extra channels."""

    def __init__(self, mode):
        super().__init__()
        self.mode = mode

    def forward(self, x, train=True, skip=None):
        self.skip_shape = skip.shape
        if self.mode == "identity":
            return x + skip
        stride = skip.shape[2] // x.shape[2]
        self.stride = stride
        self.lo = (x.shape[1] - skip.shape[1]) // 2
        y = x.copy()
        y[:, self.lo : self.lo + skip.shape[1]] += skip[:, :, ::stride, ::stride]
        return y

    def backward(self, dy):
        if self.mode == "identity":
            return dy, dy
        dskip = np.zeros(self.skip_shape, dtype=dy.dtype)
        dskip[:, :, :: self.stride, :: self.stride] = dy[:, self.lo : self.lo + self.skip_shape[1]]
        return dy, dskip
