"""Finite-difference verification of whole-network gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..arch import ArchSpec, LayerKind, LayerSpec, SPConvSettings
from ..errors import ConfigError
from .layers import ReLU
from .model import ModelGraph, build_model, softmax_cross_entropy

__all__ = [
    "GradcheckResult",
    "gradcheck",
    "gradcheck_variant",
    "toy_spconv_arch",
    "toy_linear_arch",
    "GRADCHECK_TOL",
]

GRADCHECK_TOL = 1e-4


@dataclass
class GradcheckResult:
    max_rel_error: float
    worst: str  # "layer.param[index]"
    checked: int
    skipped: int = 0  # entries whose every probe straddled a ReLU kink

    @property
    def passed(self) -> bool:
        return self.max_rel_error < GRADCHECK_TOL


def toy_spconv_arch(variant: str = "full", alpha: float = 0.5, groups: int = 2, channels: int = 8,
                    size: int = 6, classes: int = 3) -> ArchSpec:
    """Two SPConv blocks with batch norm, ReLU and a residual join, then a linear head."""
    s = SPConvSettings.variant(variant, alpha, groups)
    c = channels
    layers = (
        LayerSpec("stem", LayerKind.CONV, 3, c, 3, 1, 1),
        LayerSpec("stem.bn", LayerKind.BATCHNORM, c, c),
        LayerSpec("stem.relu", LayerKind.RELU),
        LayerSpec("sp1", LayerKind.SPCONV, c, c, 3, 1, 1, spconv=s),
        LayerSpec("sp1.bn", LayerKind.BATCHNORM, c, c),
        LayerSpec("sp1.relu", LayerKind.RELU),
        LayerSpec("sp2", LayerKind.SPCONV, c, 2 * c, 3, 2, 1, spconv=s),
        LayerSpec("sp2.bn", LayerKind.BATCHNORM, 2 * c, 2 * c),
        LayerSpec("add", LayerKind.ADD, skip="stem.relu", skip_mode="pad"),
        LayerSpec("relu", LayerKind.RELU),
        LayerSpec("pool", LayerKind.GAP_HEAD),
        LayerSpec("fc", LayerKind.LINEAR, 2 * c, classes),
    )
    return ArchSpec(f"toy-spconv-{variant}", (3, size, size), layers)


def toy_linear_arch(features: int = 12, classes: int = 4) -> ArchSpec:
    layers = (
        LayerSpec("pool", LayerKind.GAP_HEAD),
        LayerSpec("fc1", LayerKind.LINEAR, 3, features),
        LayerSpec("fc2", LayerKind.LINEAR, features, classes),
    )
    return ArchSpec("toy-linear", (3, 4, 4), layers)


def gradcheck(model: ModelGraph, eps: float = 1e-5, batch: int = 4, seed: int = 0,
              max_entries: int | None = None, sabotage: bool = False) -> GradcheckResult:
    """Max relative error between backprop and central differences of the loss.

    The model is converted to float64 in place.  Batch norm runs in training
    mode, so its batch statistics are part of the differentiated function.
    ``max_entries`` bounds the number of probed entries per parameter tensor.
    ``sabotage`` scales the analytic gradients by 1.01, a deliberate fault
    used to confirm that the checker can fail.

    A central difference is meaningless when the perturbation flips the sign
    of some ReLU input.  Such probes are retried with the step shrunk 100-fold
    (twice at most); entries that still cross a kink are counted in
    ``skipped`` rather than compared.
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    model.astype(np.float64)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, *model.arch.input_shape))
    logits = model.forward(x, train=True)
    classes = logits.shape[1]
    y = rng.integers(0, classes, batch)

    relus = [layer for _, layer, _, _ in model.nodes if isinstance(layer, ReLU)]

    def loss_at() -> tuple[float, bool]:
        loss = softmax_cross_entropy(model.forward(x, train=True), y)[0]
        smooth = all(np.array_equal(r.mask, m) for r, m in zip(relus, base_masks))
        return loss, smooth

    base_masks = [r.mask.copy() for r in relus]
    _, dl = softmax_cross_entropy(logits, y)
    model.backward(dl)
    analytic = {k: g.copy() * (1.01 if sabotage else 1.0) for k, g in model.gradients().items()}

    worst, worst_at, checked, skipped = 0.0, "", 0, 0
    for name, layer, key, _ in model.named_params():
        flat = layer.params[key].reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        a_flat = analytic[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            for h in (eps, eps * 1e-2, eps * 1e-4):
                flat[i] = orig + h
                lp, ok_p = loss_at()
                flat[i] = orig - h
                lm, ok_m = loss_at()
                flat[i] = orig
                if ok_p and ok_m:
                    break
            else:
                skipped += 1
                continue
            num = (lp - lm) / (2 * h)
            an = a_flat[i]
            err = abs(num - an) / max(abs(num), abs(an), 1e-6)
            checked += 1
            if err > worst:
                worst, worst_at = err, f"{name}[{i}]"
    return GradcheckResult(float(worst), worst_at, checked, skipped)


def gradcheck_variant(variant: str = "full", seed: int = 0, eps: float = 1e-5,
                      sabotage: bool = False) -> GradcheckResult:
    model = build_model(toy_spconv_arch(variant), seed, np.float64)
    return gradcheck(model, eps, seed=seed, sabotage=sabotage)
