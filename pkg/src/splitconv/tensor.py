"""Dense NCHW tensor kernels: convolution, global pooling and two-way softmax fusion.

Tensors are plain ``numpy.ndarray`` objects.  Activations are 4-D arrays in
``(n, c, h, w)`` row-major order; convolution weights are 4-D arrays in
``(m_out, c_in_per_group, k, k)`` order; channel statistics are 2-D ``(n, c)``
arrays.  Every function is pure and allocates its result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, GeometryError, NumericError, PartitionError

__all__ = [
    "ConvGeom",
    "conv2d_naive",
    "conv2d",
    "conv2d_backward",
    "conv_output_size",
    "gap",
    "fusion_weights",
    "fuse",
    "split_channels",
    "concat_channels",
]


@dataclass(frozen=True)
class ConvGeom:
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.stride < 1:
            raise GeometryError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise GeometryError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise GeometryError(f"groups must be >= 1, got {self.groups}")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise GeometryError(
            f"empty output: size={size} kernel={kernel} stride={stride} padding={padding}"
        )
    return out


def _as4(name: str, a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 4:
        raise DimensionError(f"{name} must be 4-D, got shape {a.shape}")
    if min(a.shape) < 1:
        raise DimensionError(f"{name} has an empty axis: {a.shape}")
    return a


def _check_conv(x, w, geom: ConvGeom):
    x = _as4("x", x)
    w = _as4("w", w)
    n, c, h, wd = x.shape
    m, cpg, kh, kw = w.shape
    if kh != kw:
        raise DimensionError(f"kernel must be square, got {kh}x{kw}")
    g = geom.groups
    if c % g:
        raise DimensionError(f"input channel axis: {c} not divisible by groups={g}")
    if m % g:
        raise DimensionError(f"output channel axis: {m} not divisible by groups={g}")
    if cpg != c // g:
        raise DimensionError(
            f"weight input-channel axis: expected {c // g} per group, got {cpg}"
        )
    ho = conv_output_size(h, kh, geom.stride, geom.padding)
    wo = conv_output_size(wd, kw, geom.stride, geom.padding)
    return x, w, ho, wo


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d_naive(x, w, geom: ConvGeom = ConvGeom()) -> np.ndarray:
    """Reference convolution by explicit loop nest.

    Accumulation order per output channel is fixed: input channel, then
    kernel row, then kernel column.  Only the batch/spatial axes are
    vectorised, so the result does not depend on BLAS.
    """
    x, w, ho, wo = _check_conv(x, w, geom)
    n, c, _, _ = x.shape
    m, cpg, k, _ = w.shape
    s, g = geom.stride, geom.groups
    mpg = m // g
    xp = _pad(x, geom.padding)
    out = np.zeros((n, m, ho, wo), dtype=np.result_type(x, w))
    for oc in range(m):
        base = (oc // mpg) * cpg
        acc = out[:, oc]
        for ic in range(cpg):
            plane = xp[:, base + ic]
            for i in range(k):
                for j in range(k):
                    acc += w[oc, ic, i, j] * plane[:, i : i + s * ho : s, j : j + s * wo : s]
    return out


def _windows(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    # (n, c, ho, wo, k, k) strided view, no copy
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, : s * (ho - 1) + 1 : s, : s * (wo - 1) + 1 : s]


def conv2d(x, w, geom: ConvGeom = ConvGeom()) -> np.ndarray:
    """Convolution via patch matrix and one GEMM per group."""
    x, w, ho, wo = _check_conv(x, w, geom)
    n, c, _, _ = x.shape
    m, cpg, k, _ = w.shape
    g = geom.groups
    mpg = m // g
    dtype = np.result_type(x, w)
    if k == 1 and geom.padding == 0:
        xs = x[:, :, :: geom.stride, :: geom.stride]
        out = np.empty((n, m, ho, wo), dtype=dtype)
        for gi in range(g):
            xg = xs[:, gi * cpg : (gi + 1) * cpg]
            wg = w[gi * mpg : (gi + 1) * mpg, :, 0, 0]
            out[:, gi * mpg : (gi + 1) * mpg] = np.einsum(
                "oc,nchw->nohw", wg, xg, optimize=True
            )
        return out
    win = _windows(_pad(x, geom.padding), k, geom.stride, ho, wo)
    out = np.empty((n, ho, wo, m), dtype=dtype)
    for gi in range(g):
        cols = win[:, gi * cpg : (gi + 1) * cpg].transpose(0, 2, 3, 1, 4, 5)
        cols = cols.reshape(n * ho * wo, cpg * k * k)
        wg = w[gi * mpg : (gi + 1) * mpg].reshape(mpg, -1)
        out[..., gi * mpg : (gi + 1) * mpg] = (cols @ wg.T).reshape(n, ho, wo, mpg)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, geom: ConvGeom, grad_out):
    """Gradients of :func:`conv2d` with respect to input and weights.

    Returns ``(grad_x, grad_w)`` with the shapes of ``x`` and ``w``.
    """
    x, w, ho, wo = _check_conv(x, w, geom)
    grad_out = _as4("grad_out", grad_out)
    n, c, h, wd = x.shape
    m, cpg, k, _ = w.shape
    if grad_out.shape != (n, m, ho, wo):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != forward output {(n, m, ho, wo)}"
        )
    g, s, p = geom.groups, geom.stride, geom.padding
    mpg = m // g
    dtype = np.result_type(x, w, grad_out)
    grad_w = np.empty(w.shape, dtype=dtype)
    # (n*ho*wo, m)
    go = grad_out.transpose(0, 2, 3, 1).reshape(-1, m)
    win = _windows(_pad(x, p), k, s, ho, wo)
    for gi in range(g):
        cols = win[:, gi * cpg : (gi + 1) * cpg].transpose(0, 2, 3, 1, 4, 5)
        cols = cols.reshape(n * ho * wo, cpg * k * k)
        gog = go[:, gi * mpg : (gi + 1) * mpg]
        grad_w[gi * mpg : (gi + 1) * mpg] = (gog.T @ cols).reshape(mpg, cpg, k, k)
    if s == 1 and p <= k - 1:
        return _input_grad_transposed(grad_out, w, geom, (h, wd)), grad_w
    dcols = np.empty((n, ho, wo, c, k, k), dtype=dtype)
    for gi in range(g):
        wg = w[gi * mpg : (gi + 1) * mpg].reshape(mpg, -1)
        dcols[:, :, :, gi * cpg : (gi + 1) * cpg] = (go[:, gi * mpg : (gi + 1) * mpg] @ wg).reshape(
            n, ho, wo, cpg, k, k
        )
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=dtype)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)  # n, c, k, k, ho, wo
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, i, j]
    grad_x = dxp[:, :, p : p + h, p : p + wd] if p else dxp
    return np.ascontiguousarray(grad_x), grad_w


def _input_grad_transposed(grad_out, w, geom, hw):
    # stride-1 input gradient: full correlation of grad_out with the flipped,
    # group-transposed kernel, which reuses the forward GEMM path
    m, cpg, k, _ = w.shape
    g, p = geom.groups, geom.padding
    q = k - 1 - p
    d = np.pad(grad_out, ((0, 0), (0, 0), (q, q), (q, q))) if q else grad_out
    wt = w[:, :, ::-1, ::-1].reshape(g, m // g, cpg, k, k).transpose(0, 2, 1, 3, 4)
    wt = np.ascontiguousarray(wt.reshape(g * cpg, m // g, k, k))
    return conv2d(d, wt, ConvGeom(1, 0, g))


def gap(u) -> np.ndarray:
    """Per-channel spatial mean, shape ``(n, c)``."""
    u = _as4("u", u)
    return u.mean(axis=(2, 3))


def fusion_weights(s3, s1):
    """Two-way channel softmax between branch statistics.

    Returns ``(beta, gamma)`` where ``beta = e^s3 / (e^s3 + e^s1)`` and
    ``gamma = 1 - beta``.
    """
    s3 = np.asarray(s3)
    s1 = np.asarray(s1)
    if s3.shape != s1.shape:
        raise DimensionError(f"stat shapes differ: {s3.shape} vs {s1.shape}")
    if not (np.all(np.isfinite(s3)) and np.all(np.isfinite(s1))):
        raise NumericError("channel statistics must be finite")
    top = np.maximum(s3, s1)
    e3 = np.exp(s3 - top)
    e1 = np.exp(s1 - top)
    beta = e3 / (e3 + e1)
    # gamma taken as e1/(e3+e1) rather than 1-beta: no cancellation when beta ~ 1
    gamma = e1 / (e3 + e1)
    return beta, gamma


def fuse(u3, u1, beta, gamma) -> np.ndarray:
    u3 = _as4("u3", u3)
    u1 = _as4("u1", u1)
    if u3.shape != u1.shape:
        raise DimensionError(f"branch shapes differ: {u3.shape} vs {u1.shape}")
    beta = np.asarray(beta)
    gamma = np.asarray(gamma)
    nc = u3.shape[:2]
    if beta.shape != nc or gamma.shape != nc:
        raise DimensionError(
            f"importance vectors must have shape {nc}, got {beta.shape} and {gamma.shape}"
        )
    return beta[:, :, None, None] * u3 + gamma[:, :, None, None] * u1


def split_channels(x, n_front: int):
    x = _as4("x", x)
    c = x.shape[1]
    if not 0 < n_front < c:
        raise PartitionError(f"split point {n_front} outside (0, {c})")
    return x[:, :n_front], x[:, n_front:]


def concat_channels(front, back) -> np.ndarray:
    return np.concatenate([front, back], axis=1)
