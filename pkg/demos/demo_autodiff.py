"""
The tape, by hand
=================

Everything in this package trains through one explicit reverse-mode
tape over 4-d (batch, channel, height, width) tensors. This walks the
life cycle: record, backward, verify against finite differences.
"""

import numpy as np

from guidepth import Tape, Tensor, grad_check
from guidepth import autodiff as ad
from guidepth.layers import conv2d, init_conv
from guidepth.rng import substream

rng = substream(0, "demo-autodiff")

# A tape only records tensors registered on it; everything else is a
# constant with no gradient slot.
tape = Tape()
x = tape.leaf(Tensor(rng.normal(size=(1, 2, 4, 4))))
c = Tensor(np.full((1, 2, 4, 4), 0.5))  # constant, never registered

y = ad.mul(ad.relu(ad.add(x, c)), x)  # y = relu(x + 0.5) * x
loss = ad.sum_all(ad.square(y))
print(f"loss = {loss.item():.6f}")

tape.backward(loss)
print(f"dx has shape {x.grad.shape}, mean |dx| = {np.abs(x.grad).mean():.4f}")
print(f"constant grad slot stays empty: {c.grad is None}")
print()

# The same check the test suite runs: central differences at h = 1e-5
# against the recorded gradient, coordinate by coordinate.
report = grad_check(
    lambda t: ad.sum_all(ad.square(ad.mul(ad.relu(ad.add(t, Tensor(c.data))), t))),
    Tensor(x.data),
    tol=1e-5,
)
print(f"elementwise chain: max rel err {report.max_rel_error:.2e} "
      f"over {report.checked} coords -> {'ok' if report.passed else 'BROKEN'}")

# Convolution gradients flow into the input and the kernel alike.
w = init_conv(rng, 2, 3, 3, stride=2)
report = grad_check(
    lambda t: ad.sum_all(ad.square(conv2d(t, w))), Tensor(rng.normal(size=(1, 2, 7, 7)))
)
print(f"strided conv dx:   max rel err {report.max_rel_error:.2e} "
      f"-> {'ok' if report.passed else 'BROKEN'}")
