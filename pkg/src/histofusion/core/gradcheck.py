"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward
from .trace import trace_branches


@dataclass
class ProbeResult:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    step: float = 1e-3

    @property
    def abs_err(self) -> float:
        return abs(self.analytic - self.numeric)

    @property
    def rel_err(self) -> float:
        return self.abs_err / max(abs(self.analytic), abs(self.numeric), 1e-30)

    def ok(self, rtol: float, atol: float) -> bool:
        return self.abs_err <= atol or self.rel_err <= rtol


def _evaluate(loss_fn, smooth_only: bool):
    if not smooth_only:
        return loss_fn().item(), None
    with trace_branches() as log:
        value = loss_fn().item()
    return value, tuple(log)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
                    rng: np.random.Generator, probes: int = 20, h: float = 1e-3,
                    smooth_only: bool = True, min_step_ratio: float = 1e-3) -> list[ProbeResult]:
    """Compare taped gradients with central differences on random coordinates.

    ``loss_fn`` must rebuild the scalar from the current tensor values each
    call.  Tensors with fewer than ``probes`` elements are probed exhaustively.

    With ``smooth_only`` every evaluation records the branch choices of the
    piecewise ops it runs (sign of abs/relu inputs, active clamp side, bilinear
    grid cell, histogram bin of each token).  A probe whose +h or -h step
    changes any choice straddles a kink or jump where central differences do
    not estimate the derivative; it is dropped and another coordinate of the
    same tensor is drawn in its place.  When a tensor runs out of coordinates
    first, the dropped ones are retried with the step shrunk tenfold at a time
    (down to ``h * min_step_ratio``) until the step stays on one smooth piece.
    Each result records the step it used.
    """
    for _, t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
        backward(tape, loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in tensors}
    _, base_sig = _evaluate(loss_fn, smooth_only)

    def probe(flat, i, step):
        orig = flat[i].copy()
        flat[i] = orig + step
        up, sig_up = _evaluate(loss_fn, smooth_only)
        flat[i] = orig - step
        down, sig_down = _evaluate(loss_fn, smooth_only)
        flat[i] = orig
        if sig_up != base_sig or sig_down != base_sig:
            return None
        return (up - down) / (2 * step)

    results = []
    for name, t in tensors:
        flat = t.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        wanted = min(probes, flat.size)
        found: list[tuple[int, float, float]] = []
        rejected = []
        for i in rng.permutation(flat.size):
            if len(found) == wanted:
                break
            numeric = probe(flat, i, h)
            if numeric is None:
                rejected.append(i)
            else:
                found.append((i, numeric, h))
        # too few smooth coordinates: shrink the step on the rejected ones
        for i in rejected:
            if len(found) == wanted:
                break
            step = h / 10
            while step >= h * min_step_ratio:
                numeric = probe(flat, i, step)
                if numeric is not None:
                    found.append((i, numeric, step))
                    break
                step /= 10
        for i, numeric, step in found:
            idx = np.unravel_index(i, t.shape)
            results.append(ProbeResult(name, tuple(int(v) for v in idx), float(grad[i]),
                                       float(numeric), step))
    return results

def worst(results: Sequence[ProbeResult], rtol: float = 1e-2, atol: float = 1e-4):
    """Failing probes (empty list when all pass)."""
    return [r for r in results if not r.ok(rtol, atol)]
