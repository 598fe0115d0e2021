"""Declarative network descriptions and shape propagation.

An :class:`ArchSpec` is an ordered list of :class:`LayerSpec`.  Each layer
reads the output of the previous layer unless ``source`` names an earlier
layer; ``ADD`` layers additionally sum in the output of ``skip``.
Shape-preserving kinds (batch norm, activation, pooling, add) take their
channel count from their input, so it may be left at 0.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Optional

from .errors import ConfigError, PropagationError
from .spconv import VARIANTS, Fusion, RepMode, SPConvConfig
from .tensor import conv_output_size

__all__ = [
    "LayerKind",
    "SPConvSettings",
    "LayerSpec",
    "ArchSpec",
    "ResolvedLayer",
    "propagate",
    "replace_policy",
    "with_classes",
    "arch_to_dict",
    "arch_from_dict",
    "load_arch",
    "save_arch",
    "ARCH_SCHEMA",
]


class LayerKind(str, enum.Enum):
    CONV = "CONV"
    SPCONV = "SPCONV"
    LINEAR = "LINEAR"
    BATCHNORM = "BATCHNORM"
    POOL = "POOL"
    ADD = "ADD"
    GAP_HEAD = "GAP_HEAD"
    RELU = "RELU"


SHAPE_PRESERVING = {LayerKind.BATCHNORM, LayerKind.RELU, LayerKind.ADD}


@dataclass(frozen=True)
class SPConvSettings:
    alpha: float = 0.5
    groups: int = 2
    rep_mode: RepMode = RepMode.GWC_PLUS_PWC
    redundant_enabled: bool = True
    fusion: Fusion = Fusion.ATTENTION

    def __post_init__(self):
        object.__setattr__(self, "rep_mode", RepMode(self.rep_mode))
        object.__setattr__(self, "fusion", Fusion(self.fusion))

    @classmethod
    def variant(cls, name: str, alpha: float = 0.5, groups: int = 2) -> "SPConvSettings":
        try:
            flags = VARIANTS[name]
        except KeyError:
            raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None
        return cls(alpha=alpha, groups=groups, **flags)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    groups: int = 1
    source: Optional[str] = None
    skip: Optional[str] = None
    skip_mode: str = "identity"  # ADD: "identity" or "pad" (subsample + zero channels)
    pool_mode: str = "max"
    bias: bool = True  # LINEAR only
    spconv: Optional[SPConvSettings] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))

    def spconv_config(self) -> SPConvConfig:
        s = self.spconv or SPConvSettings()
        return SPConvConfig(
            in_channels=self.in_channels,
            out_channels=self.out_channels,
            kernel=self.kernel,
            alpha=s.alpha,
            groups=s.groups,
            stride=self.stride,
            padding=self.padding,
            rep_mode=s.rep_mode,
            redundant_enabled=s.redundant_enabled,
            fusion=s.fusion,
        )


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer(self, name: str) -> LayerSpec:
        for lay in self.layers:
            if lay.name == name:
                return lay
        raise KeyError(name)


@dataclass(frozen=True)
class ResolvedLayer:
    """A layer with channel counts filled in and its input/output shapes known."""

    spec: LayerSpec
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    skip_shape: Optional[tuple[int, int, int]] = None


def _fail(layer: LayerSpec, msg: str):
    raise PropagationError(f"layer {layer.name!r} ({layer.kind.value}): {msg}")


def propagate(arch: ArchSpec, input_shape=None) -> list[ResolvedLayer]:
    """Infer every layer's input and output shape; raise naming the first bad layer."""
    shape = tuple(input_shape or arch.input_shape)
    outputs: dict[str, tuple[int, int, int]] = {}
    resolved = []
    prev = shape
    for lay in arch.layers:
        if lay.name in outputs or lay.name == "input":
            _fail(lay, "duplicate layer name")
        if lay.source is None:
            x = prev
        elif lay.source == "input":
            x = shape
        elif lay.source in outputs:
            x = outputs[lay.source]
        else:
            _fail(lay, f"source {lay.source!r} is not an earlier layer")
        c, h, w = x
        skip_shape = None
        kind = lay.kind
        try:
            if kind in (LayerKind.CONV, LayerKind.SPCONV):
                if lay.in_channels != c:
                    _fail(lay, f"expects {lay.in_channels} input channels, got {c}")
                if kind is LayerKind.CONV and (c % lay.groups or lay.out_channels % lay.groups):
                    _fail(lay, f"groups={lay.groups} does not divide channels")
                ho = conv_output_size(h, lay.kernel, lay.stride, lay.padding)
                wo = conv_output_size(w, lay.kernel, lay.stride, lay.padding)
                if kind is LayerKind.SPCONV:
                    lay.spconv_config()  # validates alpha/groups against widths
                out = (lay.out_channels, ho, wo)
            elif kind is LayerKind.LINEAR:
                if (h, w) != (1, 1):
                    _fail(lay, f"needs a (c, 1, 1) input, got {x}")
                if lay.in_channels != c:
                    _fail(lay, f"expects {lay.in_channels} input features, got {c}")
                out = (lay.out_channels, 1, 1)
            elif kind is LayerKind.POOL:
                ho = conv_output_size(h, lay.kernel, lay.stride, lay.padding)
                wo = conv_output_size(w, lay.kernel, lay.stride, lay.padding)
                out = (c, ho, wo)
                lay = replace(lay, in_channels=c, out_channels=c)
            elif kind is LayerKind.GAP_HEAD:
                out = (c, 1, 1)
                lay = replace(lay, in_channels=c, out_channels=c)
            elif kind in SHAPE_PRESERVING:
                for declared in (lay.in_channels, lay.out_channels):
                    if declared and declared != c:
                        _fail(lay, f"declared {declared} channels, input has {c}")
                if kind is LayerKind.ADD:
                    if lay.skip not in outputs:
                        _fail(lay, f"skip source {lay.skip!r} is not an earlier layer")
                    skip_shape = outputs[lay.skip]
                    sc, sh, sw = skip_shape
                    if lay.skip_mode == "identity":
                        if skip_shape != x:
                            _fail(lay, f"skip shape {skip_shape} != input {x}")
                    elif lay.skip_mode == "pad":
                        if sc > c or (sc - c) % 2 or sh % h or sw % w or sh // h != sw // w:
                            _fail(lay, f"cannot pad-project skip {skip_shape} onto {x}")
                    else:
                        _fail(lay, f"unknown skip_mode {lay.skip_mode!r}")
                out = x
                lay = replace(lay, in_channels=c, out_channels=c)
            else:  # pragma: no cover
                _fail(lay, "unsupported kind")
        except (ConfigError, ValueError) as exc:
            if isinstance(exc, PropagationError):
                raise
            _fail(lay, str(exc))
        outputs[lay.name] = out
        resolved.append(ResolvedLayer(lay, x, out, skip_shape))
        prev = out
    if not resolved:
        raise PropagationError(f"architecture {arch.name!r} has no layers")
    return resolved


def replace_policy(arch: ArchSpec, alpha: float, groups: int = 2, variant: str = "full",
                   kernel: int = 3) -> ArchSpec:
    """Swap every ``kernel`` x ``kernel`` CONV except the first conv layer for an SPCONV."""
    settings = SPConvSettings.variant(variant, alpha=alpha, groups=groups)
    layers = []
    first_conv = next((l.name for l in arch.layers if l.kind is LayerKind.CONV), None)
    for lay in arch.layers:
        if (
            lay.kind is LayerKind.CONV
            and lay.kernel == kernel
            and lay.groups == 1
            and lay.name != first_conv
        ):
            lay = replace(lay, kind=LayerKind.SPCONV, spconv=settings)
        layers.append(lay)
    name = f"{arch.name}-spconv-a{_fmt_alpha(alpha)}-g{groups}"
    if variant != "full":
        name += f"-{variant}"
    return ArchSpec(name, arch.input_shape, tuple(layers))


def with_classes(arch: ArchSpec, classes: int) -> ArchSpec:
    """Resize the final LINEAR layer to ``classes`` outputs."""
    idx = max((i for i, l in enumerate(arch.layers) if l.kind is LayerKind.LINEAR), default=None)
    if idx is None:
        raise PropagationError(f"{arch.name!r} has no LINEAR head to resize")
    if arch.layers[idx].out_channels == classes:
        return arch
    layers = list(arch.layers)
    layers[idx] = replace(layers[idx], out_channels=classes)
    return ArchSpec(arch.name, arch.input_shape, tuple(layers))


def _fmt_alpha(alpha: float) -> str:
    from fractions import Fraction

    f = Fraction(alpha).limit_denominator(1024)
    return f"{f.numerator}/{f.denominator}" if f.denominator != 1 else str(f.numerator)


# -- JSON interchange -------------------------------------------------------

ARCH_SCHEMA = json.loads(
    resources.files("splitconv").joinpath("arch_schema.json").read_text(encoding="utf-8")
)

_LAYER_DEFAULTS = {f: getattr(LayerSpec("_", LayerKind.RELU), f) for f in LayerSpec.__dataclass_fields__}


def arch_to_dict(arch: ArchSpec) -> dict:
    layers = []
    for lay in arch.layers:
        d = {"name": lay.name, "kind": lay.kind.value}
        for key, value in asdict(lay).items():
            if key in ("name", "kind") or value == _LAYER_DEFAULTS[key]:
                continue
            if key == "spconv":
                value = {
                    "alpha": lay.spconv.alpha,
                    "groups": lay.spconv.groups,
                    "rep_mode": lay.spconv.rep_mode.value,
                    "redundant_enabled": lay.spconv.redundant_enabled,
                    "fusion": lay.spconv.fusion.value,
                }
            d[key] = value
        layers.append(d)
    return {"name": arch.name, "input_shape": list(arch.input_shape), "layers": layers}


def arch_from_dict(data: dict) -> ArchSpec:
    import jsonschema

    try:
        jsonschema.validate(data, ARCH_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid architecture file: {exc.message}") from None
    layers = []
    for d in data["layers"]:
        d = dict(d)
        if "spconv" in d:
            d["spconv"] = SPConvSettings(**d["spconv"])
        layers.append(LayerSpec(**d))
    return ArchSpec(data["name"], tuple(data["input_shape"]), tuple(layers))


def save_arch(arch: ArchSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(arch_to_dict(arch), fh, indent=2)
        fh.write("\n")


def load_arch(path) -> ArchSpec:
    with open(path, encoding="utf-8") as fh:
        return arch_from_dict(json.load(fh))
