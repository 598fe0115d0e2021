"""Check backprop against central differences for every operator variant.

Run with ``python demos/04_gradient_check.py``.
"""

from splitconv.harness.gradcheck import gradcheck_variant
from splitconv.spconv import VARIANTS

for name in sorted(VARIANTS):
    r = gradcheck_variant(name)
    print(f"{name:<14} max relative error {r.max_rel_error:.2e} over {r.checked} entries"
          f"  -> {'ok' if r.passed else 'MISMATCH'}")

# the checker must notice a wrong gradient
bad = gradcheck_variant("full", sabotage=True)
print(f"sabotaged gradient: {bad.max_rel_error:.2e} -> {'caught' if not bad.passed else 'missed'}")
