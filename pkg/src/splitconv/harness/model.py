"""Executable networks built from :class:`~splitconv.arch.ArchSpec` descriptors."""

from __future__ import annotations

import numpy as np

from ..arch import ArchSpec, LayerKind, propagate
from ..errors import PropagationError
from . import layers as L

__all__ = ["ModelGraph", "build_model", "softmax_cross_entropy"]


class ModelGraph:
    def __init__(self, arch: ArchSpec, nodes, dtype):
        self.arch = arch
        self.nodes = nodes  # list of (name, layer, source, skip)
        self.dtype = np.dtype(dtype)

    # parameters ----------------------------------------------------------
    def named_params(self):
        for name, layer, _, _ in self.nodes:
            for k, v in layer.params.items():
                yield f"{name}.{k}", layer, k, v

    def parameters(self) -> dict[str, np.ndarray]:
        return {full: v for full, _, _, v in self.named_params()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {full: layer.grads[k] for full, layer, k, _ in self.named_params()}

    def set_parameter(self, full_name: str, value: np.ndarray):
        for full, layer, k, _ in self.named_params():
            if full == full_name:
                layer.params[k] = value
                return
        raise KeyError(full_name)

    @property
    def num_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.copy() for k, v in self.parameters().items()}
        for name, layer, _, _ in self.nodes:
            for k, v in layer.buffers.items():
                state[f"{name}.{k}"] = v.copy()
        return state

    def load_state_dict(self, state):
        for name, layer, _, _ in self.nodes:
            for d in (layer.params, layer.buffers):
                for k in d:
                    d[k] = state[f"{name}.{k}"].astype(self.dtype, copy=True)

    def astype(self, dtype) -> "ModelGraph":
        self.dtype = np.dtype(dtype)
        for _, layer, _, _ in self.nodes:
            layer.astype(self.dtype)
        return self

    # execution -----------------------------------------------------------
    def forward(self, x, train=True) -> np.ndarray:
        """Logits of shape ``(n, classes)`` (or the final 4-D activation)."""
        x = np.asarray(x, dtype=self.dtype)
        outs = {"input": x}
        prev = "input"
        for name, layer, src, skip in self.nodes:
            inp = outs[src if src is not None else prev]
            y = layer.forward(inp, train, outs[skip] if skip is not None else None)
            outs[name] = y
            prev = name
        self._last = prev
        y = outs[prev]
        return y[:, :, 0, 0] if y.shape[2:] == (1, 1) else y

    def backward(self, dlogits):
        """Backpropagate from the final output; fills every layer's ``grads``."""
        dy = np.asarray(dlogits, dtype=self.dtype)
        if dy.ndim == 2:
            dy = dy[:, :, None, None]
        grads = {self._last: dy}
        names = ["input"] + [n for n, _, _, _ in self.nodes]
        for idx in range(len(self.nodes) - 1, -1, -1):
            name, layer, src, skip = self.nodes[idx]
            g = grads.pop(name, None)
            if g is None:
                continue
            src_name = src if src is not None else names[idx]
            res = layer.backward(g)
            if skip is not None:
                dx, dskip = res
                _accumulate(grads, skip, dskip)
            else:
                dx = res
            _accumulate(grads, src_name, dx)
        return grads.get("input")

    def predict(self, x, batch_size=256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(out).argmax(axis=1)


def _accumulate(grads, name, g):
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = g


def build_model(arch: ArchSpec, params_seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Instantiate ``arch`` with freshly initialised parameters."""
    try:
        resolved = propagate(arch)
    except PropagationError as exc:
        raise PropagationError(f"cannot build {arch.name!r}: {exc}") from None
    rng = np.random.default_rng(params_seed)
    nodes = []
    for r in resolved:
        s = r.spec
        k = s.kind
        if k is LayerKind.CONV:
            layer = L.Conv(s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, s.groups, rng, dtype)
        elif k is LayerKind.SPCONV:
            layer = L.SPConv(s.spconv_config(), rng, dtype)
        elif k is LayerKind.BATCHNORM:
            layer = L.BatchNorm(r.in_shape[0], dtype)
        elif k is LayerKind.RELU:
            layer = L.ReLU()
        elif k is LayerKind.POOL:
            layer = L.Pool(s.kernel, s.stride, s.padding, s.pool_mode)
        elif k is LayerKind.GAP_HEAD:
            layer = L.GapHead()
        elif k is LayerKind.LINEAR:
            layer = L.Linear(s.in_channels, s.out_channels, s.bias, rng, dtype)
        elif k is LayerKind.ADD:
            layer = L.Add(s.skip_mode)
        else:  # pragma: no cover
            raise PropagationError(f"no runtime layer for {k.value}")
        nodes.append((s.name, layer, s.source, s.skip))
    return ModelGraph(arch, nodes, dtype)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
