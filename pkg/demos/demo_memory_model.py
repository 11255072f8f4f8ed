"""
Kernel memory of three guidance flavors
=======================================

A dynamic-convolution layer predicts a filter from guidance features and
applies it to depth features. How big that predicted filter is depends
entirely on how much structure you are willing to share:

  DC  a full C x C x R x R kernel per pixel
  CF  a C x R x R spatial kernel per pixel plus one C x C mixer
  EG  a single per-channel scale per pixel plus one C x C mixer

This script prints the closed-form costs at the reference shape and at a
sweep of channel widths.
"""

from fractions import Fraction

from guidepth import memory_report
from guidepth.memory import closed_form_ratios

# the reference operating point: 128 channels on a 128 x 608 raster,
# 3x3 kernels, 4-byte elements
report = memory_report(C=128, H=128, W=608, R=3)
print(report.as_text())
print()

# the printed ratio column divides rounded GB figures; the exact
# element-count ratios are rational numbers
ratios = closed_form_ratios(128, 128, 608, 3)
for name, frac in ratios.items():
    print(f"{name} exact = {frac} ~= 1/{float(1 / frac):.1f}")
print()

# DC grows quadratically in channels, EG only linearly (plus the small
# C^2 mixer), so the gap widens fast
print(f"{'C':>6} {'DC GB':>12} {'CF GB':>10} {'EG GB':>10}")
for c in (16, 32, 64, 128, 256):
    rows = {r["method"]: r for r in memory_report(C=c, H=128, W=608, R=3).rows()}
    print(
        f"{c:>6} {rows['DC']['GB']:>12.3f} {rows['CF']['GB']:>10.3f} "
        f"{rows['EG']['GB']:>10.3f}"
    )
