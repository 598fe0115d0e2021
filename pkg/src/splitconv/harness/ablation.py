"""Ablation suite and the vanilla-vs-SPConv twin experiment."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..arch import ArchSpec, replace_policy, with_classes
from ..complexity import analyze
from ..spconv import VARIANTS
from ..zoo import builtin_arch
from .data import Dataset, synth_dataset
from .model import build_model
from .train import TrainConfig, train

__all__ = [
    "ABLATION_ORDER",
    "AblationRow",
    "ablation_suite",
    "TwinResult",
    "twin_experiment",
    "DESK_CONFIG",
    "desk_data",
]

# fixed reporting order of the ablation rows
ABLATION_ORDER = ("full", "gwc_then_pwc", "vanilla_rep", "no_fusion", "no_redundant")

# schedule used for the desk-scale anchor runs on the synthetic set
DESK_CONFIG = TrainConfig(lr=0.05, batch_size=32, epochs=12, decay_epochs=(7, 10), weight_decay=5e-4)


def desk_data(seed: int = 0, n_train: int = 1000, n_test: int = 400, classes: int = 4):
    """Seeded synthetic train/held-out split, float32."""
    data = synth_dataset(seed, n_train + n_test, classes).astype(np.float32)
    return data.split(n_train)


@dataclass
class AblationRow:
    variant: str
    params: int  # analyzer count for the ResNet-20 instantiation
    flops: int
    trained_params: int  # parameter count of the model actually trained
    accuracies: list[float]

    @property
    def mean_acc(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def spread(self) -> float:
        return float(np.max(self.accuracies) - np.min(self.accuracies)) if self.accuracies else 0.0


def ablation_suite(train_set: Dataset, test_set: Dataset, base_config: TrainConfig,
                   seeds=(0,), train_arch: str = "resnet8", alpha: float = 0.5, groups: int = 2,
                   variants=ABLATION_ORDER, log=None) -> list[AblationRow]:
    """Train every variant on ``train_arch`` and report ResNet-20 analyzer columns alongside.

    With an empty ``seeds`` nothing is trained and only the analyzer columns
    are filled.
    """
    r20 = builtin_arch("resnet20")
    small = builtin_arch(train_arch)
    if train_set is not None:
        small = with_classes(small, train_set.classes)
    rows = []
    for v in variants:
        if v not in VARIANTS:
            raise KeyError(f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")
        rep = analyze(replace_policy(r20, alpha, groups, v))
        arch = replace_policy(small, alpha, groups, v)
        accs = []
        trained = 0
        for seed in seeds:
            model = build_model(arch, seed)
            trained = model.num_params
            report = train(model, train_set, replace(base_config, seed=seed), test_set)
            accs.append(report.final_test_acc)
            if log is not None:
                log(v, seed, report)
        if not seeds:
            trained = analyze(arch).params
        rows.append(AblationRow(v, rep.params, rep.flops, trained, accs))
    return rows


@dataclass
class TwinResult:
    vanilla: list[float]
    spconv: list[float]
    vanilla_params: int
    spconv_params: int
    seconds: float

    @property
    def param_ratio(self) -> float:
        return self.spconv_params / self.vanilla_params

    @property
    def gap(self) -> float:
        """Mean vanilla accuracy minus mean SPConv accuracy."""
        return float(np.mean(self.vanilla) - np.mean(self.spconv))


def twin_experiment(seeds=(0, 1, 2), arch: ArchSpec | None = None, alpha: float = 0.5,
                    groups: int = 2, config: TrainConfig = DESK_CONFIG, data=None,
                    log=None) -> TwinResult:
    """Train a vanilla network and its SPConv twin on the same data for each seed."""
    train_set, test_set = data or desk_data()
    arch = with_classes(arch or builtin_arch("resnet8"), train_set.classes)
    twin = replace_policy(arch, alpha, groups)
    t0 = time.perf_counter()
    res = {"vanilla": [], "spconv": []}
    counts = {}
    for seed in seeds:
        for label, a in (("vanilla", arch), ("spconv", twin)):
            model = build_model(a, seed)
            counts[label] = model.num_params
            report = train(model, train_set, replace(config, seed=seed), test_set)
            res[label].append(report.final_test_acc)
            if log is not None:
                log(label, seed, report)
    return TwinResult(res["vanilla"], res["spconv"], counts.get("vanilla", 0),
                      counts.get("spconv", 0), time.perf_counter() - t0)
