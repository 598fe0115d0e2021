"""Parameter and FLOP budgets for the built-in networks.

Swaps every 3x3 convolution except the stem for a split convolution and
prints the totals side by side.  Run with
``python demos/02_complexity_tables.py``.
"""

from splitconv.arch import replace_policy
from splitconv.complexity import analyze
from splitconv.zoo import builtin_arch

for name, alphas in [("resnet20", (1 / 2, 1 / 4)), ("vgg16_cifar", (1 / 2, 1 / 4, 1 / 8, 1 / 16)),
                     ("resnet50", (1 / 2, 1 / 4, 1 / 8))]:
    base = builtin_arch(name)
    b = analyze(base)
    print(f"\n{name}: {b.params / 1e6:.4f}M params, {b.flops / 1e6:.2f}M FLOPs")
    for a in alphas:
        r = analyze(replace_policy(base, a, 2), base)
        print(f"  alpha=1/{round(1 / a):<3d} {r.params / 1e6:8.4f}M ({r.params_reduction:5.2f}% fewer)"
              f"  {r.flops / 1e6:9.2f}M FLOPs ({r.flops_reduction:5.2f}% fewer)")

# the ablation variants on ResNet-20
base = builtin_arch("resnet20")
print("\nResNet-20 ablation variants at alpha=1/2:")
for v in ("full", "gwc_then_pwc", "vanilla_rep", "no_fusion", "no_redundant"):
    r = analyze(replace_policy(base, 0.5, 2, v))
    print(f"  {v:<14}{r.params / 1e6:8.4f}M params {r.flops / 1e6:8.2f}M FLOPs"
          f"  (fusion overhead {r.totals.fusion_flops / 1e6:.2f}M)")

# a per-layer view shows where the budget goes
print()
print(analyze(replace_policy(builtin_arch("resnet8"), 0.5, 2), builtin_arch("resnet8")).format_table(True))
