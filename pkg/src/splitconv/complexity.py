"""Closed-form parameter and FLOP accounting.

Counting convention: one multiply-accumulate is one FLOP.  Convolutions and
linear layers count their MACs, batch norm counts two FLOPs per element
(scale and shift), pooling counts one FLOP per window element, residual
adds and global pooling one per input element.  Activations are free.
Element-wise work inside a split convolution that is not a MAC (branch
summation, global pooling of the branches, softmax and re-weighting) is
tracked separately as ``fusion_flops`` and included in the totals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .arch import ArchSpec, LayerKind, LayerSpec, ResolvedLayer, propagate
from .errors import ConfigError
from .spconv import Fusion, RepMode, representative_count

__all__ = [
    "LayerCount",
    "Totals",
    "ComplexityReport",
    "count_vanilla",
    "count_spconv",
    "count_layer",
    "analyze",
    "FLOP_CONVENTION",
]

FLOP_CONVENTION = (
    "1 FLOP = 1 multiply-accumulate; conv/linear MACs, batch norm 2/elem, "
    "pool 1/window elem, add 1/elem, activations free"
)


def count_vanilla(layer: LayerSpec, h_out: int, w_out: int) -> tuple[int, int]:
    """``(params, flops)`` of a non-split layer given its output spatial size.

    Channel counts are taken from the (resolved) layer spec; batch norm and
    add use ``out_channels``.
    """
    kind = layer.kind
    hw = h_out * w_out
    if kind is LayerKind.CONV:
        params = layer.kernel * layer.kernel * layer.in_channels * layer.out_channels // layer.groups
        return params, params * hw
    if kind is LayerKind.LINEAR:
        macs = layer.in_channels * layer.out_channels
        return macs + (layer.out_channels if layer.bias else 0), macs
    if kind is LayerKind.BATCHNORM:
        return 2 * layer.out_channels, 2 * layer.out_channels * hw
    if kind is LayerKind.POOL:
        return 0, layer.kernel * layer.kernel * layer.out_channels * hw
    if kind in (LayerKind.ADD, LayerKind.GAP_HEAD):
        # GAP_HEAD is charged on its input size by count_layer
        return 0, layer.out_channels * hw
    if kind is LayerKind.RELU:
        return 0, 0
    raise ConfigError(f"count_vanilla does not handle {kind.value}")


def count_spconv(layer: LayerSpec, h_out: int, w_out: int) -> tuple[int, int, int]:
    """``(params, flops, fusion_flops)`` of a split-convolution layer.

    ``flops`` includes ``fusion_flops``; ``flops - fusion_flops`` is exactly
    ``params * h_out * w_out``.
    """
    if layer.kind is not LayerKind.SPCONV:
        raise ConfigError(f"count_spconv needs an SPCONV layer, got {layer.kind.value}")
    s = layer.spconv
    L, M, k = layer.in_channels, layer.out_channels, layer.kernel
    g = s.groups if s.rep_mode is not RepMode.VANILLA else 1
    rep = representative_count(L, s.alpha, g)
    red = L - rep
    if rep < g or (s.redundant_enabled and red < 1):
        raise ConfigError(f"layer {layer.name!r}: alpha={s.alpha}, groups={g} invalid for {L} channels")
    if g > 1 and M % g:
        raise ConfigError(f"layer {layer.name!r}: {M} output channels not divisible by {g}")
    if s.rep_mode is RepMode.VANILLA:
        params = k * k * rep * M
    elif s.rep_mode is RepMode.GWC_PLUS_PWC:
        params = k * k * (rep // g) * M + rep * M
    else:
        params = k * k * (rep // g) * M + M * M
    if s.redundant_enabled:
        params += red * M
    hw = h_out * w_out
    fusion = M * hw if s.rep_mode is RepMode.GWC_PLUS_PWC else 0
    if s.redundant_enabled:
        if s.fusion is Fusion.ATTENTION:
            # 2 branch GAPs + beta*U3 + gamma*U1 (2 MACs/elem) + 4/channel softmax
            fusion += 2 * M * hw + 2 * M * hw + 4 * M
        else:
            fusion += M * hw
    return params, params * hw + fusion, fusion


@dataclass(frozen=True)
class LayerCount:
    name: str
    kind: str
    params: int
    flops: int
    fusion_flops: int
    out_shape: tuple[int, int, int]


def count_layer(r: ResolvedLayer) -> LayerCount:
    lay = r.spec
    _, h, w = r.out_shape
    if lay.kind is LayerKind.SPCONV:
        p, f, fu = count_spconv(lay, h, w)
    elif lay.kind is LayerKind.GAP_HEAD:
        c, hi, wi = r.in_shape
        p, f, fu = 0, c * hi * wi, 0
    else:
        p, f = count_vanilla(lay, h, w)
        fu = 0
    return LayerCount(lay.name, lay.kind.value, p, f, fu, r.out_shape)


@dataclass(frozen=True)
class Totals:
    params: int
    flops: int
    fusion_flops: int
    conv_params: int  # CONV + SPCONV only
    conv_flops: int  # CONV + SPCONV MACs, fusion excluded
    backbone_params: int  # everything before the classifier head
    backbone_flops: int

    @classmethod
    def from_rows(cls, rows: list[LayerCount]) -> "Totals":
        conv = [r for r in rows if r.kind in ("CONV", "SPCONV")]
        head_at = next((i for i, r in enumerate(rows) if r.kind == "GAP_HEAD"), len(rows))
        backbone = rows[:head_at]
        return cls(
            params=sum(r.params for r in rows),
            flops=sum(r.flops for r in rows),
            fusion_flops=sum(r.fusion_flops for r in rows),
            conv_params=sum(r.params for r in conv),
            conv_flops=sum(r.flops - r.fusion_flops for r in conv),
            backbone_params=sum(r.params for r in backbone),
            backbone_flops=sum(r.flops for r in backbone),
        )


def _reduction(new: int, base: int) -> float:
    return 100.0 * (1.0 - new / base) if base else 0.0


@dataclass
class ComplexityReport:
    name: str
    input_shape: tuple[int, int, int]
    rows: list[LayerCount]
    totals: Totals
    baseline_name: Optional[str] = None
    baseline: Optional[Totals] = None
    convention: str = field(default=FLOP_CONVENTION)

    @property
    def params(self) -> int:
        return self.totals.params

    @property
    def flops(self) -> int:
        return self.totals.flops

    @property
    def params_reduction(self) -> Optional[float]:
        return _reduction(self.totals.params, self.baseline.params) if self.baseline else None

    @property
    def flops_reduction(self) -> Optional[float]:
        return _reduction(self.totals.flops, self.baseline.flops) if self.baseline else None

    @property
    def conv_flops_reduction(self) -> Optional[float]:
        if not self.baseline:
            return None
        return _reduction(self.totals.conv_flops, self.baseline.conv_flops)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "convention": self.convention,
            "layers": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "params": r.params,
                    "flops": r.flops,
                    "fusion_flops": r.fusion_flops,
                    "out_shape": list(r.out_shape),
                }
                for r in self.rows
            ],
            "totals": vars(self.totals).copy(),
        }
        if self.baseline:
            d["baseline"] = {"name": self.baseline_name, **vars(self.baseline)}
            d["reduction_percent"] = {
                "params": round(self.params_reduction, 2),
                "flops": round(self.flops_reduction, 2),
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self, per_layer: bool = False) -> str:
        out = [f"# {self.name}  input={'x'.join(map(str, self.input_shape))}", f"# {self.convention}"]
        if per_layer:
            out.append(f"{'layer':<22}{'kind':<10}{'params':>12}{'flops':>15}{'fusion':>12}")
            for r in self.rows:
                if r.params or r.flops:
                    out.append(
                        f"{r.name:<22}{r.kind:<10}{r.params:>12,}{r.flops:>15,}{r.fusion_flops:>12,}"
                    )
        t = self.totals
        out.append(f"{'':<22}{'':<10}{'params':>12}{'FLOPs':>15}")
        rows = [(self.name, t)]
        if self.baseline:
            rows.insert(0, (self.baseline_name or "baseline", self.baseline))
        for label, tt in rows:
            out.append(f"{label[:32]:<32}{_human(tt.params):>12}{_human(tt.flops):>15}")
        out.append(f"{'fusion FLOPs':<32}{'':>12}{_human(t.fusion_flops):>15}")
        out.append(
            f"{'backbone (no head)':<32}{_human(t.backbone_params):>12}{_human(t.backbone_flops):>15}"
        )
        if self.baseline:
            out.append(
                f"{'reduced':<32}{self.params_reduction:>11.2f}%{self.flops_reduction:>14.2f}%"
            )
        return "\n".join(out)


def _human(v: int) -> str:
    if v >= 1e9:
        return f"{v / 1e9:.2f}G"
    if v >= 1e6:
        return f"{v / 1e6:.2f}M"
    if v >= 1e3:
        return f"{v / 1e3:.2f}K"
    return str(v)


def analyze(arch: ArchSpec, baseline: Optional[ArchSpec] = None, input_shape=None) -> ComplexityReport:
    rows = [count_layer(r) for r in propagate(arch, input_shape)]
    report = ComplexityReport(
        arch.name, tuple(input_shape or arch.input_shape), rows, Totals.from_rows(rows)
    )
    if baseline is not None:
        base_rows = [count_layer(r) for r in propagate(baseline, input_shape)]
        report.baseline_name = baseline.name
        report.baseline = Totals.from_rows(base_rows)
    return report
