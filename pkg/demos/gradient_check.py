"""
Checking hand-written gradients
===============================

Every backward rule in the package is verified against central finite
differences. This script checks one block, then shows why probes that cross
a kink have to be skipped.

    python demos/gradient_check.py
"""
import numpy as np

from histofusion.core import functional as F
from histofusion.core.gradcheck import check_gradients, worst
from histofusion.core.tensor import Tensor, default_dtype
from histofusion.deformable import DCNFormerBlock
from histofusion.gradsuite import _center_offsets, _randomize

rng = np.random.default_rng(3)

with default_dtype(np.float64):
    # A full DCNFormer block
    # ----------------------
    block = DCNFormerBlock(4, groups=2, points=9, rng=rng)
    _randomize(block, rng, 0.2)
    _center_offsets(block, rng)  # keep samples off grid lines, where bilinear has kinks
    x = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
    proj = rng.standard_normal((1, 4, 8, 8))
    results = check_gradients(lambda: F.sum(block(x) * proj),
                              [("x", x)] + list(block.named_parameters()), rng)
    bad = worst(results, rtol=1e-2, atol=1e-4)
    print(f"DCNFormer block: {len(results)} probes, {len(bad)} outside 1e-2 rel / 1e-4 abs")
    print(f"largest relative error {max(r.rel_err for r in results if r.abs_err > 1e-12):.1e}")

    # A kink
    # ------
    # |t| at t = 5e-4: a step of h = 1e-3 lands on both sides of zero, so the
    # central difference averages the two slopes instead of giving the slope.
    t = Tensor(np.array([5e-4]), requires_grad=True)
    raw = check_gradients(lambda: F.sum(F.abs(t)), [("t", t)], rng, smooth_only=False)[0]
    safe = check_gradients(lambda: F.sum(F.abs(t)), [("t", t)], rng)[0]
    print(f"|t| at 5e-4: analytic {raw.analytic:+.3f}, naive numeric {raw.numeric:+.3f}; "
          f"branch-aware numeric {safe.numeric:+.3f} using step {safe.step:.0e}")
