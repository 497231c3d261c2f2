"""Bilinear sampling with zero padding, scalar and batched."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import _deform_kernels as _k
from . import trace
from .tensor import Tensor, as_tensor, make_result


def _corner_weights(px: np.ndarray, py: np.ndarray, h: int, w: int):
    """Return corner indices (y, x), bilinear weights and their px/py derivatives.

    Each returned array has a trailing axis of length 4 ordered
    (y0,x0), (y0,x1), (y1,x0), (y1,x1).  Out-of-range corners get weight 0.
    """
    x0 = np.floor(px)
    y0 = np.floor(py)
    lx = px - x0
    ly = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    ys = np.stack([y0, y0, y0 + 1, y0 + 1], axis=-1)
    xs = np.stack([x0, x0 + 1, x0, x0 + 1], axis=-1)
    wts = np.stack([(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx], axis=-1)
    dwx = np.stack([-(1 - ly), 1 - ly, -ly, ly], axis=-1)
    dwy = np.stack([-(1 - lx), -lx, 1 - lx, lx], axis=-1)
    valid = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    wts = wts * valid
    dwx = dwx * valid
    dwy = dwy * valid
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    return ys, xs, wts, dwx, dwy


def bilinear_sample(x: Tensor, px, py, n: int, c: int) -> Tensor:
    """Sample channel ``c`` of image ``n`` at fractional column ``px`` / row ``py``.

    Positions outside the grid read zeros.  Returns a scalar tensor that is
    differentiable with respect to ``x``, ``px`` and ``py``.
    """
    x, px, py = as_tensor(x), as_tensor(px), as_tensor(py)
    _, _, h, w = x.shape
    pxv = np.asarray(px.data, dtype=np.float64).reshape(())
    pyv = np.asarray(py.data, dtype=np.float64).reshape(())
    trace.record("bilinear_cell", np.floor([pxv, pyv]))
    ys, xs, wts, dwx, dwy = _corner_weights(pxv, pyv, h, w)
    vals = x.data[n, c, ys, xs].astype(np.float64)
    out = np.array((wts * vals).sum())

    def backward(g):
        gv = float(np.asarray(g).reshape(-1)[0])
        gx = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(gx, (n, c, ys, xs), gv * wts)
        return (gx, np.full(px.shape, gv * (dwx * vals).sum()),
                np.full(py.shape, gv * (dwy * vals).sum()))

    return make_result("bilinear_sample", out, (x, px, py), backward)


def default_base_offsets(points: int) -> np.ndarray:
    """Centered k-by-k integer grid as (dy, dx) pairs; ``points`` must be an odd square."""
    k = int(round(points ** 0.5))
    if k * k != points or k % 2 == 0:
        raise ConfigurationError(
            f"points={points} is not an odd square; pass base offsets explicitly")
    r = np.arange(k) - k // 2
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def deform_aggregate(x: Tensor, offsets: Tensor, modulation: Tensor, groups: int,
                     base_offsets: np.ndarray) -> Tensor:
    """Modulated deformable aggregation before the output projection.

    For every position p0, group g and channel j inside the group::

        out[n, g*Cg + j, p0] = sum_k mod[n, g*K + k, p0]
                               * x_g[j](p0 + base[k] + delta[n, g, k, p0])

    ``offsets`` has 2*G*K channels ordered (g, k, [dx, dy]); ``modulation``
    has G*K channels ordered (g, k).  Modulation is used as given.
    """
    n, c, h, w = x.shape
    base = np.asarray(base_offsets)
    k = base.shape[0]
    if c % groups:
        raise ConfigurationError(f"channels {c} not divisible by groups {groups}")
    if offsets.shape != (n, 2 * groups * k, h, w):
        raise DimensionError(f"offsets shape {offsets.shape} != {(n, 2 * groups * k, h, w)}")
    if modulation.shape != (n, groups * k, h, w):
        raise DimensionError(f"modulation shape {modulation.shape} != {(n, groups * k, h, w)}")
    xt = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))
    off = np.ascontiguousarray(offsets.data.transpose(0, 2, 3, 1))
    mod = np.ascontiguousarray(modulation.data.transpose(0, 2, 3, 1))
    base = base.astype(xt.dtype)
    if trace.tracing():
        # grid cell of every sample: x + base_dx + dx and y + base_dy + dy
        gk = groups * k
        o = off.reshape(n, h, w, gk, 2)
        cols = np.arange(w)[None, None, :, None] + np.tile(base[:, 1], groups)[None, None, None]
        rows = np.arange(h)[None, :, None, None] + np.tile(base[:, 0], groups)[None, None, None]
        trace.record("deform_cell", np.floor(np.stack([cols + o[..., 0], rows + o[..., 1]])))
    out_t = np.zeros_like(xt)
    _k.deform_forward(xt, off, mod, base, groups, out_t)
    out = out_t.transpose(0, 3, 1, 2)

    def backward(g):
        gout = np.ascontiguousarray(g.transpose(0, 2, 3, 1), dtype=xt.dtype)
        gx = np.zeros_like(xt)
        goff = np.zeros_like(off)
        gmod = np.zeros_like(mod)
        _k.deform_backward(xt, off, mod, base, groups, gout, gx, goff, gmod)
        return (gx.transpose(0, 3, 1, 2), goff.transpose(0, 3, 1, 2),
                gmod.transpose(0, 3, 1, 2))

    return make_result("deform_aggregate", out, (x, offsets, modulation), backward)
