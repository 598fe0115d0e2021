"""Command-line interface: ``splitconv {analyze,train,gradcheck,bench,ablate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure
(divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .arch import ArchSpec, load_arch, replace_policy, with_classes
from .complexity import analyze
from .errors import DivergenceError, MissingDataError, SplitConvError
from .spconv import VARIANTS
from .zoo import BUILTINS, builtin_arch

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def parse_alpha(text: str) -> float:
    """Accept ``"1/2"``, ``"0.5"`` or ``"1"``; result must lie in (0, 1]."""
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid split ratio {text!r}") from None
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"split ratio must be in (0, 1], got {text}")
    return float(value)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def resolve_arch(ref: str) -> ArchSpec:
    if ref in BUILTINS:
        return builtin_arch(ref)
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        if not path.is_file():
            raise UsageError(f"architecture file {ref} not found")
        return load_arch(path)
    raise UsageError(f"unknown architecture {ref!r}; built-ins: {', '.join(sorted(BUILTINS))}")


def _print_config(cfg: dict, stream) -> None:
    print("# config " + json.dumps(cfg, sort_keys=True), file=stream, flush=True)


def _write_outputs(out: str | None, cfg: dict, files: dict[str, str]) -> None:
    if not out:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / name).write_text(text)
    manifest = {"version": __version__, "config": cfg, "files": sorted(files)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --- analyze ------------------------------------------------------------------


def cmd_analyze(args) -> int:
    base = resolve_arch(args.arch)
    shape = None
    if args.input_size:
        shape = (base.input_shape[0], args.input_size, args.input_size)
    cfg = {"command": "analyze", "arch": base.name, "alpha": args.alpha, "groups": args.groups,
           "variant": args.variant, "input_shape": list(shape or base.input_shape)}
    _print_config(cfg, sys.stderr if args.format == "json" else sys.stdout)
    if args.alpha is None:
        report = analyze(base, input_shape=shape)
    else:
        report = analyze(replace_policy(base, args.alpha, args.groups, args.variant), base, shape)
    text = report.to_json() if args.format == "json" else report.format_table(args.per_layer)
    print(text)
    _write_outputs(args.out, cfg, {"report.json": report.to_json() + "\n"})
    return EXIT_OK


# --- train --------------------------------------------------------------------


def _load_dataset(spec: str, n_train: int, n_test: int, seed: int, classes: int):
    from .harness.ablation import desk_data
    from .harness.data import default_data_dir, load_cifar10

    if spec == "synth":
        return desk_data(seed, n_train, n_test, classes)
    if spec.startswith("cifar10"):
        _, _, path = spec.partition(":")
        root = Path(path) if path else default_data_dir()
        if root is None:
            raise UsageError("cifar10 needs a path (cifar10:DIR) or SPLITCONV_DATA")
        try:
            train_set = load_cifar10(root, "train")
            test_set = load_cifar10(root, "test")
        except MissingDataError as exc:
            raise UsageError(str(exc)) from None
        return train_set.astype(np.float32), test_set.astype(np.float32)
    raise UsageError(f"unknown dataset {spec!r}; use synth or cifar10:PATH")


def _train_config(args):
    from .harness.ablation import DESK_CONFIG

    decay = tuple(args.decay_epochs) if args.decay_epochs is not None else None
    if decay is None:
        # keep the desk schedule's shape when only the epoch count changes
        e = args.epochs
        decay = tuple(sorted({d for d in (round(e * 0.6), round(e * 0.85)) if 0 < d < e}))
    return replace(
        DESK_CONFIG,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        decay_epochs=decay,
        seed=args.seed,
        augment=args.augment,
    )


def cmd_train(args) -> int:
    from .harness import build_model
    from .harness.train import train

    base = resolve_arch(args.arch)
    arch = base if args.conv == "vanilla" else replace_policy(base, args.alpha, args.groups, args.variant)
    config = _train_config(args)
    cfg = {"command": "train", "arch": arch.name, "dataset": args.dataset, "conv": args.conv,
           "train": asdict(config), "n_train": args.n_train, "n_test": args.n_test,
           "classes": args.classes, "data_seed": args.data_seed}
    _print_config(cfg, sys.stdout)
    train_set, test_set = _load_dataset(args.dataset, args.n_train, args.n_test, args.data_seed, args.classes)
    arch = with_classes(arch, train_set.classes)
    model = build_model(arch, args.seed)
    print(f"# model {arch.name}: {model.num_params:,} parameters")

    def log(s):
        print(f"epoch {s.epoch:3d}  lr={s.lr:.4g}  loss={s.train_loss:.4f}  "
              f"train_acc={s.train_acc:.4f}  test_acc={s.test_acc:.4f}  ({s.seconds:.1f}s)", flush=True)

    try:
        report = train(model, train_set, config, test_set, log=log)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.epochs == 0:
        print(f"initial test accuracy {report.initial_test_acc:.4f}")
    print(f"final test accuracy {report.final_test_acc:.4f}")
    _write_outputs(args.out, cfg, {"report.csv": report.to_csv(), "report.json": report.to_json() + "\n"})
    return EXIT_OK


# --- gradcheck ----------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    from .harness.gradcheck import GRADCHECK_TOL, gradcheck_variant

    variants = list(VARIANTS) if args.variant == "all" else [args.variant]
    cfg = {"command": "gradcheck", "variants": variants, "seed": args.seed, "eps": args.eps,
           "sabotage": args.sabotage, "tolerance": GRADCHECK_TOL}
    _print_config(cfg, sys.stdout)
    ok = True
    lines = []
    for v in variants:
        r = gradcheck_variant(v, args.seed, args.eps, args.sabotage)
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        line = f"{status}  {v:<14} max_rel_error={r.max_rel_error:.3e}  worst={r.worst}  entries={r.checked}"
        lines.append(line)
        print(line, flush=True)
    _write_outputs(args.out, cfg, {"gradcheck.txt": "\n".join(lines) + "\n"})
    return EXIT_OK if ok else EXIT_RUNTIME


# --- bench --------------------------------------------------------------------


def cmd_bench(args) -> int:
    from .harness import build_model

    base = resolve_arch(args.arch)
    convs = ["vanilla", "spconv"] if args.conv == "both" else [args.conv]
    cfg = {"command": "bench", "arch": base.name, "conv": convs, "alpha": args.alpha,
           "groups": args.groups, "batch": args.batch, "repeat": args.repeat, "warmup": args.warmup,
           "dtype": args.dtype}
    _print_config(cfg, sys.stdout)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.batch, *base.input_shape)).astype(args.dtype)
    rows = []
    print(f"{'model':<34}{'params':>12}{'FLOPs':>14}{'median ms':>12}{'p90 ms':>10}{'n':>4}")
    for conv in convs:
        arch = base if conv == "vanilla" else replace_policy(base, args.alpha, args.groups, args.variant)
        model = build_model(arch, 0, np.dtype(args.dtype))
        report = analyze(arch)
        for _ in range(args.warmup):
            model.forward(x, train=False)
        times = []
        for _ in range(args.repeat):
            t = time.perf_counter()
            model.forward(x, train=False)
            times.append(1e3 * (time.perf_counter() - t))
        med, p90 = float(np.median(times)), float(np.percentile(times, 90))
        rows.append(f"{arch.name},{report.params},{report.flops},{med:.3f},{p90:.3f},{len(times)}")
        print(f"{arch.name[:33]:<34}{report.params:>12,}{report.flops:>14,}{med:>12.2f}{p90:>10.2f}{len(times):>4}")
    _write_outputs(args.out, cfg, {"bench.csv": "model,params,flops,median_ms,p90_ms,n\n" + "\n".join(rows) + "\n"})
    return EXIT_OK


# --- ablate -------------------------------------------------------------------


def cmd_ablate(args) -> int:
    from .harness.ablation import ablation_suite

    config = _train_config(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    cfg = {"command": "ablate", "dataset": args.dataset, "train_arch": args.train_arch,
           "alpha": args.alpha, "groups": args.groups, "seeds": seeds, "train": asdict(config)}
    _print_config(cfg, sys.stdout)
    resolve_arch(args.train_arch)
    train_set, test_set = _load_dataset(args.dataset, args.n_train, args.n_test, args.data_seed, args.classes)

    def log(v, seed, rep):
        print(f"# {v} seed={seed} test_acc={rep.final_test_acc:.4f} ({rep.seconds:.1f}s)", flush=True)

    try:
        rows = ablation_suite(train_set, test_set, config, seeds, args.train_arch, args.alpha,
                              args.groups, log=log)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{'variant':<14}{'R20 params':>12}{'R20 FLOPs':>12}{'trained params':>16}{'accuracy':>18}")
    csv = ["variant,resnet20_params,resnet20_flops,trained_params,mean_acc,spread"]
    for r in rows:
        acc = f"{100 * r.mean_acc:.2f} ± {100 * r.spread / 2:.2f}"
        print(f"{r.variant:<14}{r.params / 1e6:>11.4f}M{r.flops / 1e6:>11.2f}M{r.trained_params:>16,}{acc:>18}")
        csv.append(f"{r.variant},{r.params},{r.flops},{r.trained_params},{r.mean_acc:.6f},{r.spread:.6f}")
    _write_outputs(args.out, cfg, {"ablation.csv": "\n".join(csv) + "\n"})
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_spconv_flags(p):
    p.add_argument("--alpha", type=parse_alpha, default=0.5, help="split ratio, e.g. 1/2 or 0.25")
    p.add_argument("--groups", type=_positive_int, default=2)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")


def _add_train_flags(p, epochs):
    p.add_argument("--dataset", default="synth", help="synth or cifar10:PATH")
    p.add_argument("--epochs", type=_nonneg_int, default=epochs)
    p.add_argument("--seed", type=int, default=0, help="initialisation and shuffle seed")
    p.add_argument("--data-seed", type=int, default=0, help="seed of the synthetic dataset")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--decay-epochs", type=int, nargs="*", default=None)
    p.add_argument("--n-train", type=_positive_int, default=1000)
    p.add_argument("--n-test", type=_positive_int, default=400)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--augment", action="store_true", help="random crop + flip")
    p.add_argument("--out", help="directory for reports and manifest.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitconv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="parameter and FLOP counts")
    p.add_argument("arch", help="built-in name or architecture JSON file")
    p.add_argument("--alpha", type=parse_alpha, default=None,
                   help="replace 3x3 convs with SPConv at this split ratio")
    p.add_argument("--groups", type=_positive_int, default=2)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--input-size", type=_positive_int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a vanilla or SPConv network")
    p.add_argument("arch")
    p.add_argument("--conv", choices=("vanilla", "spconv"), default="spconv")
    _add_spconv_flags(p)
    _add_train_flags(p, epochs=12)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference check of a toy SPConv network")
    p.add_argument("--variant", choices=sorted(VARIANTS) + ["all"], default="full")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--sabotage", action="store_true", help="corrupt the analytic gradient (self-test)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="forward-pass latency")
    p.add_argument("arch", nargs="?", default="resnet20")
    p.add_argument("--conv", choices=("vanilla", "spconv", "both"), default="both")
    _add_spconv_flags(p)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--repeat", type=_positive_int, default=5)
    p.add_argument("--warmup", type=_nonneg_int, default=1)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train the five ablation variants")
    p.add_argument("--train-arch", default="resnet8")
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of seeds")
    p.add_argument("--alpha", type=parse_alpha, default=0.5)
    p.add_argument("--groups", type=_positive_int, default=2)
    _add_train_flags(p, epochs=12)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, SplitConvError, LookupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
