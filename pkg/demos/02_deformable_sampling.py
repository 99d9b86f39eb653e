"""Deformable convolution from the ground up.

Shows bilinear reads at fractional coordinates, offset fields shifting a
kernel's receptive field, and the reduction to plain convolution when
all offsets vanish.
"""

import numpy as np

from deformgabor import bilinear_sample, conv2d_naive, deform_conv_forward
from deformgabor.deform import deform_conv_backward

plane = np.arange(16.0).reshape(4, 4)
print("plane:\n", plane)
print("sample at (1, 2)      ->", bilinear_sample(plane, 1, 2))
print("sample at (0.5, 0.5)  ->", bilinear_sample(plane, 0.5, 0.5))
print("sample at (1.25, 2.5) ->", bilinear_sample(plane, 1.25, 2.5))
print("sample at (-3, -3)    ->", bilinear_sample(plane, -3, -3), "(outside: zero)")

# a single-tap kernel with a +1 horizontal offset reads its right neighbor
x = np.array([[[1.0, 2.0, 3.0]]])
w = np.ones((1, 1, 1, 1))
off = np.zeros((2, 1, 3))
off[1] = 1.0  # dx channel
print("\nshift-by-one via offsets:", deform_conv_forward(x, w, off)[0, 0],
      "(the last tap falls off the edge and reads zero)")

# zero offsets reduce the deformable path to the naive oracle exactly
rng = np.random.default_rng(0)
x = rng.standard_normal((2, 6, 6))
w = rng.standard_normal((3, 2, 3, 3))
zero = np.zeros((18, 4, 4))
diff = np.abs(deform_conv_forward(x, w, zero) - conv2d_naive(x, w)).max()
print(f"\nzero-offset deformable vs naive conv: max |diff| = {diff:.2e}")

# gradients are analytic, including through the sampling locations
off = rng.uniform(-0.4, 0.4, size=(18, 4, 4))
gy = rng.standard_normal((3, 4, 4))
gx, gw, go = deform_conv_backward(gy, x, w, off)
print(f"gradient shapes: input {gx.shape}, weight {gw.shape}, offsets {go.shape}")

eps = 1e-6
i = (5, 2, 2)  # one dy entry
bump = off.copy()
bump[i] += eps
fd = (np.sum(deform_conv_forward(x, w, bump) * gy)
      - np.sum(deform_conv_forward(x, w, off) * gy)) / eps
print(f"offset grad sanity: analytic {go[i]:+.6f} vs forward-diff {fd:+.6f}")
