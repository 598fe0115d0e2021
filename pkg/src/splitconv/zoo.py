"""Built-in architecture descriptors: CIFAR ResNets, CIFAR VGG-16 and ResNet-50."""

from __future__ import annotations

from .arch import ArchSpec, LayerKind as K, LayerSpec

__all__ = ["cifar_resnet", "vgg16_cifar", "resnet50", "builtin_arch", "BUILTINS"]


def _conv_bn(layers, name, cin, cout, k, stride=1, relu=True, source=None):
    layers.append(LayerSpec(f"{name}", K.CONV, cin, cout, k, stride, k // 2, source=source))
    layers.append(LayerSpec(f"{name}.bn", K.BATCHNORM, cout, cout))
    if relu:
        layers.append(LayerSpec(f"{name}.relu", K.RELU))


def cifar_resnet(depth: int = 20, num_classes: int = 10, widths=(16, 32, 64)) -> ArchSpec:
    """ResNet-(6n+2) for 32x32 inputs with parameter-free (zero-pad) shortcuts."""
    if (depth - 2) % 6:
        raise ValueError(f"CIFAR ResNet depth must be 6n+2, got {depth}")
    n = (depth - 2) // 6
    layers: list[LayerSpec] = []
    _conv_bn(layers, "stem", 3, widths[0], 3)
    cin, last = widths[0], "stem.relu"
    for si, width in enumerate(widths):
        for bi in range(n):
            stride = 2 if si > 0 and bi == 0 else 1
            p = f"s{si + 1}.b{bi + 1}"
            _conv_bn(layers, f"{p}.conv1", cin, width, 3, stride, source=last)
            _conv_bn(layers, f"{p}.conv2", width, width, 3, relu=False)
            mode = "identity" if (stride == 1 and cin == width) else "pad"
            layers.append(LayerSpec(f"{p}.add", K.ADD, skip=last, skip_mode=mode))
            layers.append(LayerSpec(f"{p}.relu", K.RELU))
            cin, last = width, f"{p}.relu"
    layers.append(LayerSpec("pool", K.GAP_HEAD))
    layers.append(LayerSpec("fc", K.LINEAR, cin, num_classes))
    return ArchSpec(f"resnet{depth}", (3, 32, 32), tuple(layers))


VGG16_CFG = (64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M")


def vgg16_cifar(num_classes: int = 10, hidden: int = 512) -> ArchSpec:
    """13 conv layers + 2 fully-connected layers, batch norm after every layer but the last."""
    layers: list[LayerSpec] = []
    cin, ci, pi = 3, 0, 0
    for item in VGG16_CFG:
        if item == "M":
            pi += 1
            layers.append(LayerSpec(f"pool{pi}", K.POOL, kernel=2, stride=2))
        else:
            ci += 1
            _conv_bn(layers, f"conv{ci}", cin, item, 3)
            cin = item
    layers.append(LayerSpec("flatten", K.GAP_HEAD))
    layers.append(LayerSpec("fc1", K.LINEAR, cin, hidden))
    layers.append(LayerSpec("fc1.bn", K.BATCHNORM, hidden, hidden))
    layers.append(LayerSpec("fc1.relu", K.RELU))
    layers.append(LayerSpec("fc2", K.LINEAR, hidden, num_classes))
    return ArchSpec("vgg16_cifar", (3, 32, 32), tuple(layers))


def resnet50(num_classes: int = 1000) -> ArchSpec:
    """Bottleneck ResNet-50 for 224x224 inputs, stride on the 3x3 conv, projection shortcuts."""
    layers: list[LayerSpec] = []
    layers.append(LayerSpec("stem", K.CONV, 3, 64, 7, 2, 3))
    layers.append(LayerSpec("stem.bn", K.BATCHNORM, 64, 64))
    layers.append(LayerSpec("stem.relu", K.RELU))
    layers.append(LayerSpec("maxpool", K.POOL, kernel=3, stride=2, padding=1))
    cin, last = 64, "maxpool"
    for si, (width, blocks) in enumerate(zip((64, 128, 256, 512), (3, 4, 6, 3))):
        for bi in range(blocks):
            stride = 2 if si > 0 and bi == 0 else 1
            cout = 4 * width
            p = f"s{si + 1}.b{bi + 1}"
            _conv_bn(layers, f"{p}.conv1", cin, width, 1, source=last)
            _conv_bn(layers, f"{p}.conv2", width, width, 3, stride)
            _conv_bn(layers, f"{p}.conv3", width, cout, 1, relu=False)
            skip = last
            if stride != 1 or cin != cout:
                _conv_bn(layers, f"{p}.down", cin, cout, 1, stride, relu=False, source=last)
                layers.append(
                    LayerSpec(f"{p}.add", K.ADD, skip=f"{p}.conv3.bn", source=f"{p}.down.bn")
                )
            else:
                layers.append(LayerSpec(f"{p}.add", K.ADD, skip=skip))
            layers.append(LayerSpec(f"{p}.relu", K.RELU))
            cin, last = cout, f"{p}.relu"
    layers.append(LayerSpec("pool", K.GAP_HEAD))
    layers.append(LayerSpec("fc", K.LINEAR, cin, num_classes))
    return ArchSpec("resnet50", (3, 224, 224), tuple(layers))


BUILTINS = {
    "resnet8": lambda: cifar_resnet(8),
    "resnet20": lambda: cifar_resnet(20),
    "resnet32": lambda: cifar_resnet(32),
    "vgg16_cifar": vgg16_cifar,
    "resnet50": resnet50,
}


def builtin_arch(name: str) -> ArchSpec:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise LookupError(f"unknown architecture {name!r}; built-ins: {sorted(BUILTINS)}") from None
