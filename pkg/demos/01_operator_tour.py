"""A walk through one split convolution, piece by piece.

Run with ``python demos/01_operator_tour.py``.
"""

import numpy as np

from splitconv.spconv import SPConvConfig, init_params, spconv_forward, spconv_param_count
from splitconv.tensor import ConvGeom, conv2d, fusion_weights, gap

rng = np.random.default_rng(0)

# 64 input channels, 64 output channels, half of them representative, 2 groups
cfg = SPConvConfig(64, 64, kernel=3, alpha=0.5, groups=2)
print("representative channels:", cfg.rep_count, " redundant channels:", cfg.red_count)
print("weight blocks:", cfg.block_shapes())

params = init_params(cfg, seed=0)
x = rng.normal(size=(2, 64, 8, 8))

# the operator in one call
y, cache = spconv_forward(x, params, cfg)
print("output shape:", y.shape)

# the same thing by hand
x_rep, x_red = x[:, : cfg.rep_count], x[:, cfg.rep_count :]
u3 = conv2d(x_rep, params.w_gwc, ConvGeom(1, 1, 2)) + conv2d(x_rep, params.w_pwc_rep)
u1 = conv2d(x_red, params.w_pwc_red)
beta, gamma = fusion_weights(gap(u3), gap(u1))
y_by_hand = beta[:, :, None, None] * u3 + gamma[:, :, None, None] * u1
print("max difference to the one-call result:", np.abs(y - y_by_hand).max())

# each output channel picks its own mix of the two branches
print("beta for the first sample, first 8 channels:", np.round(beta[0, :8], 3))

# the output always sits between the two branch outputs
lo, hi = np.minimum(u3, u1), np.maximum(u3, u1)
print("inside the branch envelope:", bool(np.all((y >= lo - 1e-12) & (y <= hi + 1e-12))))

# parameter budget against a plain 3x3 convolution
vanilla = 3 * 3 * 64 * 64
sp = spconv_param_count(cfg)
print(f"vanilla {vanilla} vs split {sp}: {vanilla / sp:.3f}x fewer weights")
