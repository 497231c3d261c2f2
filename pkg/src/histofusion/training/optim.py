"""Adam and the two-stage learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core.tensor import Tensor
from ..errors import NumericalError, ParameterError

STAGE1_LR = 1e-4
STAGE1_EPOCHS = 5000
STAGE1_MILESTONES = (2000, 3000, 4000)
STAGE2_LR = 1e-5
STAGE2_EPOCHS = 200
DECAY = 0.5


def stage_epochs(stage: int, schedule_scale: float = 1.0) -> int:
    full = {1: STAGE1_EPOCHS, 2: STAGE2_EPOCHS}[_check_stage(stage)]
    return max(1, int(round(full * schedule_scale)))


def _check_stage(stage: int) -> int:
    if stage not in (1, 2):
        raise ParameterError(f"stage must be 1 or 2, got {stage}")
    return stage


def lr_at(epoch: int, stage: int, schedule_scale: float = 1.0) -> float:
    """Learning rate for a 0-based ``epoch``.

    Stage 1 starts at 1e-4 and halves at each milestone (2000, 3000, 4000 at
    full scale; milestones shrink with ``schedule_scale``).  Stage 2 is flat.
    """
    if _check_stage(stage) == 2:
        return STAGE2_LR
    if schedule_scale <= 0:
        raise ParameterError(f"schedule_scale must be > 0, got {schedule_scale}")
    passed = sum(epoch >= round(m * schedule_scale) for m in STAGE1_MILESTONES)
    return STAGE1_LR * DECAY ** passed


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | None],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update applied in place to ``params``.

    Parameters without a gradient are left untouched.  A non-finite gradient
    aborts before any parameter changes.
    """
    if lr <= 0:
        raise ParameterError(f"learning rate must be > 0, got {lr}")
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


class Adam:
    """Adam bound to a fixed set of named tensors."""

    def __init__(self, named: list[tuple[str, Tensor]], **hyper):
        self.named = list(named)
        self.state = AdamState(**hyper)

    def zero_grad(self) -> None:
        for _, p in self.named:
            p.grad = None

    def step(self, lr: float) -> None:
        params = {n: p.data for n, p in self.named}
        grads = {n: p.grad for n, p in self.named}
        adam_step(params, grads, self.state, lr)
