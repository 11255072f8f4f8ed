"""
Guidance units, their repetition, and what the meter sees
=========================================================

One guidance step pools image+semantic+depth features into a per-channel
scale and a C x C channel mixer, then applies both to the depth features.
Chaining k of these and blending the step outputs with learned convex
weights is the repetitive module. A meter counts the kernel elements the
step materializes — the same number the analytic memory model predicts.
"""

import numpy as np

from guidepth import (
    KernelMeter,
    Tensor,
    af_fuse,
    init_af_params,
    init_rg_params,
    memory_cost,
    rg_module,
)
from guidepth.rng import substream

rng = substream(5, "demo-guidance")
C, H, W = 4, 8, 8
img = Tensor(rng.normal(size=(1, C, H, W)))
sem = Tensor(rng.normal(size=(1, C, H, W)))
dep = Tensor(rng.normal(size=(1, C, H, W)))

# three chained steps; the meter logs each step's guide map and mixer
k = 3
params = init_rg_params(rng, C, k)
meter = KernelMeter()
fused, steps = rg_module(img, sem, dep, k, params, meter)
print(f"k={k} repetition: fused {fused.shape}, {len(steps)} intermediate steps")
for label, n in meter.events:
    print(f"  meter {label:<14} {n:>5} elements")
per_step = memory_cost("EG", C, H, W, 3).elements
print(f"meter total {meter.total()} == k * analytic EG cost {k * per_step}: "
      f"{meter.total() == k * per_step}")
print()

# the fusion weights are a softmax over pooled features: convex, so the
# blend can never leave the envelope of its inputs
af = init_af_params(rng, C, 2)
a = Tensor(rng.normal(size=(1, C, H, W)))
b = Tensor(rng.normal(size=(1, C, H, W)))
out, alpha = af_fuse([a, b], af, with_alpha=True)
lo = np.minimum(a.data, b.data)
hi = np.maximum(a.data, b.data)
print(f"alpha = {np.round(alpha.data.ravel(), 4)} (sums to "
      f"{alpha.data.sum():.12f})")
print(f"fused stays inside [min, max] of the inputs: "
      f"{bool(((out.data >= lo - 1e-12) & (out.data <= hi + 1e-12)).all())}")
