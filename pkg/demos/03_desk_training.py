"""Train a small ResNet and its split-convolution twin on synthetic shapes.

A shorter version of the acceptance run: one seed, a few minutes on one
CPU core.  Run with ``python demos/03_desk_training.py``.
"""

from splitconv.arch import replace_policy, with_classes
from splitconv.harness import build_model
from splitconv.harness.ablation import DESK_CONFIG, desk_data
from splitconv.harness.train import train
from splitconv.zoo import builtin_arch

train_set, test_set = desk_data(seed=0)
print(f"{len(train_set)} training images, {len(test_set)} held out, {train_set.classes} classes")

vanilla = with_classes(builtin_arch("resnet8"), train_set.classes)
twin = replace_policy(vanilla, 0.5, 2)

for arch in (vanilla, twin):
    model = build_model(arch, params_seed=0)
    print(f"\n{arch.name}: {model.num_params:,} parameters")
    report = train(model, train_set, DESK_CONFIG, test_set,
                   log=lambda s: print(f"  epoch {s.epoch:2d} loss {s.train_loss:.3f} "
                                       f"held-out {s.test_acc:.3f} ({s.seconds:.0f}s)"))
    print(f"  final held-out accuracy {report.final_test_acc:.4f}")
