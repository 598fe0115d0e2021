"""The split convolution operator.

Input channels are split positionally: the first ``rep_count`` channels are
representative and go through a heavy k x k path, the remaining ones are
redundant and go through a single 1x1 convolution.  The two branch outputs
are merged either by a parameter-free channel attention (global average
pooling followed by a two-way softmax) or by plain summation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, StateError, VariantError
from .tensor import (
    ConvGeom,
    conv2d,
    conv2d_backward,
    conv_output_size,
    fuse,
    fusion_weights,
    gap,
)

__all__ = [
    "RepMode",
    "Fusion",
    "SPConvConfig",
    "SPConvParams",
    "SPConvCache",
    "init_params",
    "representative_branch",
    "redundant_branch",
    "spconv_forward",
    "spconv_backward",
    "spconv_param_count",
    "representative_count",
    "VARIANTS",
]


class RepMode(str, enum.Enum):
    GWC_PLUS_PWC = "gwc_plus_pwc"
    VANILLA = "vanilla"
    GWC_THEN_PWC = "gwc_then_pwc"


class Fusion(str, enum.Enum):
    ATTENTION = "attention"
    SUM = "sum"


def representative_count(in_channels: int, alpha: float, groups: int) -> int:
    """Round ``alpha * in_channels`` to nearest, then down to a multiple of ``groups``."""
    target = math.floor(alpha * in_channels + 0.5)
    return (target // groups) * groups


@dataclass(frozen=True)
class SPConvConfig:
    in_channels: int
    out_channels: int
    kernel: int = 3
    alpha: float = 0.5
    groups: int = 2
    stride: int = 1
    padding: Optional[int] = None
    rep_mode: RepMode = RepMode.GWC_PLUS_PWC
    redundant_enabled: bool = True
    fusion: Fusion = Fusion.ATTENTION

    def __post_init__(self):
        object.__setattr__(self, "rep_mode", RepMode(self.rep_mode))
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        if self.padding is None:
            object.__setattr__(self, "padding", self.kernel // 2)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError("kernel/stride must be >= 1 and padding >= 0")
        if 2 * self.padding != self.kernel - 1:
            # the unpadded strided 1x1 path only aligns with 'same' padding
            raise ConfigError(
                f"padding must be (kernel-1)/2 so both branches align, got "
                f"kernel={self.kernel} padding={self.padding}"
            )
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        g = self.group_divisor
        rep = representative_count(self.in_channels, self.alpha, g)
        if rep < g:
            raise ConfigError(
                f"alpha={self.alpha} of {self.in_channels} channels leaves fewer than "
                f"{g} representative channel(s)"
            )
        if self.redundant_enabled and rep >= self.in_channels:
            raise ConfigError(
                "redundant branch enabled but no redundant channels remain "
                f"(rep_count={rep}, in_channels={self.in_channels})"
            )
        if self.grouped and self.out_channels % g:
            raise ConfigError(
                f"out_channels={self.out_channels} not divisible by groups={g}"
            )

    @property
    def grouped(self) -> bool:
        return self.rep_mode is not RepMode.VANILLA

    @property
    def group_divisor(self) -> int:
        return self.groups if self.grouped else 1

    @property
    def rep_count(self) -> int:
        return representative_count(self.in_channels, self.alpha, self.group_divisor)

    @property
    def red_count(self) -> int:
        # with the redundant branch disabled these channels are dropped
        return self.in_channels - self.rep_count

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        return (
            conv_output_size(h, self.kernel, self.stride, self.padding),
            conv_output_size(w, self.kernel, self.stride, self.padding),
        )

    def block_shapes(self) -> dict[str, tuple[int, int, int, int]]:
        """Shapes of the weight blocks this variant allocates."""
        m, k, rep = self.out_channels, self.kernel, self.rep_count
        shapes = {}
        if self.rep_mode is RepMode.VANILLA:
            shapes["w_dense"] = (m, rep, k, k)
        elif self.rep_mode is RepMode.GWC_PLUS_PWC:
            shapes["w_gwc"] = (m, rep // self.groups, k, k)
            shapes["w_pwc_rep"] = (m, rep, 1, 1)
        else:
            shapes["w_gwc"] = (m, rep // self.groups, k, k)
            shapes["w_pwc_rep"] = (m, m, 1, 1)
        if self.redundant_enabled:
            shapes["w_pwc_red"] = (m, self.red_count, 1, 1)
        return shapes

    @property
    def gwc_geom(self) -> ConvGeom:
        return ConvGeom(self.stride, self.padding, self.groups)

    @property
    def dense_geom(self) -> ConvGeom:
        return ConvGeom(self.stride, self.padding, 1)

    @property
    def pointwise_geom(self) -> ConvGeom:
        """1x1 geometry on the unpadded input, strided like the k x k path."""
        return ConvGeom(self.stride, 0, 1)


@dataclass
class SPConvParams:
    """Weight blocks of one operator. Blocks a variant does not use stay ``None``."""

    w_gwc: Optional[np.ndarray] = None
    w_pwc_rep: Optional[np.ndarray] = None
    w_pwc_red: Optional[np.ndarray] = None
    w_dense: Optional[np.ndarray] = None

    def blocks(self) -> dict[str, np.ndarray]:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if getattr(self, f.name) is not None
        }

    @property
    def size(self) -> int:
        return sum(a.size for a in self.blocks().values())

    def check(self, config: SPConvConfig):
        expected = config.block_shapes()
        got = {k: v.shape for k, v in self.blocks().items()}
        if got != expected:
            raise DimensionError(f"parameter blocks {got} do not match config {expected}")


@dataclass
class SPConvCache:
    config: SPConvConfig
    x_shape: tuple
    x_rep: np.ndarray
    x_red: Optional[np.ndarray]
    u3: np.ndarray
    u1: Optional[np.ndarray]
    gwc_out: Optional[np.ndarray] = None  # GWC_THEN_PWC intermediate
    s3: Optional[np.ndarray] = None
    s1: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None


def init_params(config: SPConvConfig, seed: int, dtype=np.float64) -> SPConvParams:
    """Zero-mean normal weights with std ``sqrt(2 / fan_in)`` per block."""
    rng = np.random.default_rng(seed)
    params = SPConvParams()
    for name, shape in config.block_shapes().items():
        fan_in = shape[1] * shape[2] * shape[3]
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(dtype)
        setattr(params, name, w)
    return params


def representative_branch(x_rep, params: SPConvParams, config: SPConvConfig):
    x_rep = np.asarray(x_rep)
    if x_rep.ndim != 4 or x_rep.shape[1] != config.rep_count:
        raise DimensionError(
            f"representative input must have {config.rep_count} channels, got shape {x_rep.shape}"
        )
    return _rep_forward(x_rep, params, config)[0]


def _rep_forward(x_rep, params, config):
    mode = config.rep_mode
    if mode is RepMode.VANILLA:
        return conv2d(x_rep, params.w_dense, config.dense_geom), None
    g = conv2d(x_rep, params.w_gwc, config.gwc_geom)
    if mode is RepMode.GWC_PLUS_PWC:
        return g + conv2d(x_rep, params.w_pwc_rep, config.pointwise_geom), None
    return conv2d(g, params.w_pwc_rep, ConvGeom()), g


def redundant_branch(x_red, params: SPConvParams, config: SPConvConfig):
    if not config.redundant_enabled:
        raise VariantError("redundant branch is disabled in this configuration")
    x_red = np.asarray(x_red)
    if x_red.ndim != 4 or x_red.shape[1] != config.red_count:
        raise DimensionError(
            f"redundant input must have {config.red_count} channels, got shape {x_red.shape}"
        )
    return conv2d(x_red, params.w_pwc_red, config.pointwise_geom)


def spconv_forward(x, params: SPConvParams, config: SPConvConfig):
    """Run the operator. Returns ``(y, cache)``; ``y`` has ``out_channels`` channels."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != config.in_channels:
        raise DimensionError(
            f"input must be 4-D with {config.in_channels} channels, got shape {x.shape}"
        )
    params.check(config)
    rep = config.rep_count
    x_rep = x[:, :rep]
    x_red = x[:, rep:] if config.redundant_enabled else None
    u3, gwc_out = _rep_forward(x_rep, params, config)
    cache = SPConvCache(config, x.shape, x_rep, x_red, u3, None, gwc_out)
    if not config.redundant_enabled:
        return u3, cache
    u1 = redundant_branch(x_red, params, config)
    cache.u1 = u1
    if config.fusion is Fusion.SUM:
        return u3 + u1, cache
    cache.s3, cache.s1 = gap(u3), gap(u1)
    cache.beta, cache.gamma = fusion_weights(cache.s3, cache.s1)
    return fuse(u3, u1, cache.beta, cache.gamma), cache


def _rep_backward(cache: SPConvCache, d_u3, params: SPConvParams, grads: SPConvParams):
    config = cache.config
    x_rep = cache.x_rep
    mode = config.rep_mode
    if mode is RepMode.VANILLA:
        dx, grads.w_dense = conv2d_backward(x_rep, params.w_dense, config.dense_geom, d_u3)
        return dx
    if mode is RepMode.GWC_PLUS_PWC:
        dx_g, grads.w_gwc = conv2d_backward(x_rep, params.w_gwc, config.gwc_geom, d_u3)
        dx_p, grads.w_pwc_rep = conv2d_backward(
            x_rep, params.w_pwc_rep, config.pointwise_geom, d_u3
        )
        return dx_g + dx_p
    d_g, grads.w_pwc_rep = conv2d_backward(cache.gwc_out, params.w_pwc_rep, ConvGeom(), d_u3)
    dx, grads.w_gwc = conv2d_backward(x_rep, params.w_gwc, config.gwc_geom, d_g)
    return dx


def spconv_backward(cache: SPConvCache, grad_out, params: SPConvParams, config: SPConvConfig):
    """Reverse-mode gradients. Returns ``(grad_x, grad_params)``."""
    if cache.config != config:
        raise StateError("cache was produced by a different configuration")
    grad_out = np.asarray(grad_out)
    if grad_out.shape != cache.u3.shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != forward output {cache.u3.shape}"
        )
    grads = SPConvParams()
    dtype = np.result_type(grad_out, cache.u3)
    grad_x = np.zeros(cache.x_shape, dtype=dtype)
    rep = config.rep_count

    if not config.redundant_enabled:
        grad_x[:, :rep] = _rep_backward(cache, grad_out, params, grads)
        return grad_x, grads

    if config.fusion is Fusion.SUM:
        d_u3 = grad_out
        d_u1 = grad_out
    else:
        u3, u1, beta, gamma = cache.u3, cache.u1, cache.beta, cache.gamma
        hw = u3.shape[2] * u3.shape[3]
        # dL/dbeta with gamma = 1 - beta
        d_beta = np.sum(grad_out * (u3 - u1), axis=(2, 3))
        # beta = sigmoid(s3 - s1)
        d_s = d_beta * beta * gamma
        d_u3 = beta[:, :, None, None] * grad_out + (d_s / hw)[:, :, None, None]
        d_u1 = gamma[:, :, None, None] * grad_out - (d_s / hw)[:, :, None, None]

    grad_x[:, :rep] = _rep_backward(cache, d_u3, params, grads)
    grad_x[:, rep:], grads.w_pwc_red = conv2d_backward(
        cache.x_red, params.w_pwc_red, config.pointwise_geom, d_u1
    )
    return grad_x, grads


def spconv_param_count(config: SPConvConfig) -> int:
    """Scalar count allocated by :func:`init_params` for this config.

    For the default variant this is ``k*k*(rep/g)*M + rep*M + red*M``.
    """
    m, k = config.out_channels, config.kernel
    rep, red = config.rep_count, config.red_count
    if config.rep_mode is RepMode.VANILLA:
        total = k * k * rep * m
    elif config.rep_mode is RepMode.GWC_PLUS_PWC:
        total = k * k * (rep // config.groups) * m + rep * m
    else:
        total = k * k * (rep // config.groups) * m + m * m
    if config.redundant_enabled:
        total += red * m
    return total


# Ablation rows: redundant branch (P1), representative mode (P20/P21/P22), attention (P3)
VARIANTS = {
    "full": dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=True, fusion=Fusion.ATTENTION),
    "gwc_then_pwc": dict(rep_mode=RepMode.GWC_THEN_PWC, redundant_enabled=True, fusion=Fusion.ATTENTION),
    "vanilla_rep": dict(rep_mode=RepMode.VANILLA, redundant_enabled=True, fusion=Fusion.ATTENTION),
    "no_fusion": dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=True, fusion=Fusion.SUM),
    "no_redundant": dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=False, fusion=Fusion.SUM),
}
