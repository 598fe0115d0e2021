"""Mini-batch SGD with momentum and weight decay."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DivergenceError, NumericError
from .data import Dataset
from .model import ModelGraph, softmax_cross_entropy

__all__ = ["TrainConfig", "EpochStats", "TrainReport", "SGD", "train", "evaluate", "augment_batch"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation schedule; the learning rate is multiplied by ``lr_decay`` at each ``decay_epochs`` entry."""

    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 30
    lr_decay: float = 0.1
    decay_epochs: tuple[int, ...] = ()
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("lr, momentum and weight_decay must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        d = self.decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])) or any(e < 1 for e in d):
            raise ConfigError(f"decay_epochs must be positive and strictly increasing, got {d}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.lr * self.lr_decay ** sum(epoch >= e for e in self.decay_epochs)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    test_acc: float | None
    seconds: float


@dataclass
class TrainReport:
    config: TrainConfig
    model: str
    params: int
    epochs: list[EpochStats] = field(default_factory=list)
    initial_test_acc: float | None = None

    @property
    def final_test_acc(self) -> float | None:
        return self.epochs[-1].test_acc if self.epochs else self.initial_test_acc

    @property
    def seconds(self) -> float:
        return sum(e.seconds for e in self.epochs)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "config": asdict(self.config),
            "initial_test_acc": self.initial_test_acc,
            "final_test_acc": self.final_test_acc,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["epoch", "lr", "train_loss", "train_acc", "test_acc", "seconds"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for e in self.epochs:
            w.writerow([getattr(e, c) for c in cols])
        return buf.getvalue()


class SGD:
    """Heavy-ball SGD with coupled L2: ``v = mu*v + g + wd*p``; ``p -= lr*v``."""

    def __init__(self, model: ModelGraph, momentum=0.9, weight_decay=0.0):
        self.model = model
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}

    def step(self, lr: float):
        grads = self.model.gradients()
        for name, layer, key, p in self.model.named_params():
            d = grads[name]
            if self.weight_decay:
                d = d + self.weight_decay * p
            if self.momentum:
                v = self.velocity[name]
                v *= self.momentum
                v += d
                d = v
            layer.params[key] = p - lr * d


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop from a zero-padded image plus random horizontal flip."""
    n, _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(x)
    oy = rng.integers(0, 2 * pad + 1, n)
    ox = rng.integers(0, 2 * pad + 1, n)
    flip = rng.random(n) < 0.5
    for i in range(n):
        crop = xp[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def evaluate(model: ModelGraph, data: Dataset, batch_size: int = 256) -> float:
    """Top-1 accuracy in eval mode."""
    if len(data) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    pred = model.predict(data.images, batch_size)
    return float(np.mean(pred == data.labels))


def train(model: ModelGraph, data: Dataset, config: TrainConfig, test: Dataset | None = None,
          log=None) -> TrainReport:
    """Train in place; ``log`` is called with each :class:`EpochStats`."""
    if len(data) == 0:
        raise ConfigError("training set is empty")
    rng = np.random.default_rng(config.seed)
    opt = SGD(model, config.momentum, config.weight_decay)
    report = TrainReport(config, model.arch.name, model.num_params)
    if test is not None:
        report.initial_test_acc = evaluate(model, test)
    images = data.images.astype(model.dtype, copy=False)
    n = len(data)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            x = images[idx]
            if config.augment:
                x = augment_batch(x, rng)
            y = data.labels[idx]
            where = f"epoch {epoch + 1}, batch {b + 1}"
            # overflow is reported through the loss check below
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    logits = model.forward(x, train=True)
                except NumericError as exc:
                    raise DivergenceError(f"non-finite activations at {where}: {exc}") from None
                loss, dlogits = softmax_cross_entropy(logits, y)
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss {loss} at {where}")
                model.backward(dlogits)
                opt.step(lr)
            loss_sum += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == y))
        stats = EpochStats(
            epoch + 1,
            lr,
            loss_sum / n,
            correct / n,
            evaluate(model, test) if test is not None else None,
            time.perf_counter() - t0,
        )
        report.epochs.append(stats)
        if log is not None:
            log(stats)
    return report
