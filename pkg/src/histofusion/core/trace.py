"""Recording of the discrete choices made by piecewise-smooth primitives.

Ops such as ``abs``, ``relu`` or ``clamp`` select one smooth branch per
element; bilinear sampling selects a grid cell; histogram binning selects a
token grouping.  Inside :func:`trace_branches` each such op appends a compact
fingerprint of its choice, which lets a finite-difference check tell whether
a perturbed evaluation stayed on the same smooth piece as the base point.
"""
from __future__ import annotations

import contextlib

import numpy as np

_LOGS: list[list[tuple[str, bytes]]] = []


@contextlib.contextmanager
def trace_branches():
    log: list[tuple[str, bytes]] = []
    _LOGS.append(log)
    try:
        yield log
    finally:
        _LOGS.remove(log)


def tracing() -> bool:
    return bool(_LOGS)


def record(kind: str, choice: np.ndarray) -> None:
    if not _LOGS:
        return
    arr = np.asarray(choice)
    blob = np.packbits(arr).tobytes() if arr.dtype == bool else arr.tobytes()
    for log in _LOGS:
        log.append((kind, blob))
