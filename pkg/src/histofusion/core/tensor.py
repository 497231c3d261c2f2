"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` wraps a contiguous numpy array.  Operations executed while a
:class:`Tape` is active append a node holding the inputs and a closure that maps
the output gradient to input gradients.  Nodes are appended in execution
order, so walking the list backwards is a valid reverse topological order.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import NumericalError, UsageError

_DTYPE = [np.dtype(np.float32)]
_TAPES: list["Tape"] = []


def get_dtype() -> np.dtype:
    return _DTYPE[-1]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for new tensors (float64 for grad checks)."""
    _DTYPE.append(np.dtype(dtype))
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    """Dense array with an optional gradient slot and tape node id."""

    __slots__ = ("data", "requires_grad", "grad", "node", "tape", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=get_dtype())
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self.tape: Tape | None = None
        self.name = name

    # -- convenience -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data, out.requires_grad, out.grad = self.data, False, None
        out.node, out.tape, out.name = None, None, None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # -- operators (implemented in functional) ----------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def backward(self) -> dict:
        if not _TAPES:
            raise UsageError("backward() needs the tape that recorded this tensor")
        return backward(_TAPES[-1], self)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of primitive ops; use as a context manager."""

    nodes: list[Node] = field(default_factory=list)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def clear(self) -> None:
        """Drop recorded nodes and gradients so their arrays can be freed at once."""
        self.nodes.clear()
        self.gradients.clear()

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor, backward_fn) -> None:
        out.node = len(self.nodes)
        out.tape = self
        out.requires_grad = True
        self.nodes.append(Node(op, tuple(inputs), backward_fn))


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops inside produce constant tensors."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(t: Tensor, tape: Tape | None) -> bool:
    if t.node is not None:
        return t.tape is tape
    return t.requires_grad


def make_result(op: str, data: np.ndarray, inputs: Iterable[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as an op output and record it if any input is tracked."""
    data = np.asarray(data, dtype=get_dtype())
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.requires_grad = False
    out.grad = None
    out.node = None
    out.tape = None
    out.name = None
    tape = active_tape()
    inputs = tuple(inputs)
    if tape is not None and any(_tracked(t, tape) for t in inputs):
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(tape: Tape, root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) for every tracked leaf reachable from ``root``.

    Leaf gradients are added into ``leaf.grad`` and also returned.
    """
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    if root.node is None or root.tape is not tape:
        raise UsageError("root tensor was not recorded on this tape")
    grads = tape.gradients
    grads.clear()
    grads[root.node] = np.ones(root.shape, dtype=root.dtype)
    leaves: dict[int, Tensor] = {}
    for idx in range(root.node, -1, -1):
        g = grads.get(idx)
        if g is None:
            continue
        node = tape.nodes[idx]
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not _tracked(t, tape):
                continue
            if gi.shape != t.shape:
                gi = np.broadcast_to(gi, t.shape)
            if t.node is not None:
                prev = grads.get(t.node)
                grads[t.node] = gi.astype(t.dtype, copy=True) if prev is None else prev + gi
            else:
                if t.grad is None:
                    t.grad = np.array(gi, dtype=t.dtype, copy=True)
                else:
                    t.grad = t.grad + gi
                leaves[id(t)] = t
    return {t: t.grad for t in leaves.values()}
