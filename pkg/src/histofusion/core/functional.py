"""Differentiable primitives on :class:`~histofusion.core.tensor.Tensor`.

Images use (N, C, H, W) layout throughout.  Every function returns a new tensor
and, when a tape is active and an input is tracked, records a backward closure.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import DimensionError
from . import trace
from .tensor import Tensor, as_tensor, get_dtype, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result("add", a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result("sub", a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_result("mul", ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return make_result("div", out, (a, b), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result("log", np.log(xd), (x,), lambda g: (g / xd,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    xd = x.data
    trace.record("abs", xd > 0)
    return make_result("abs", np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes where the input is inside the interval."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    if trace.tracing():
        trace.record("clamp", np.stack([xd > lo, xd < hi]))
    return make_result("clamp", np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    r = 1.0 / (1.0 + e)
    out = np.where(xd >= 0, r, e * r)
    return make_result("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0.0, xd)

    def backward(g):
        return (g / (1.0 + np.exp(-xd)),)

    return make_result("softplus", out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    xd = x.data
    trace.record("relu", xd > 0)
    return make_result("relu", np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    trace.record("leaky_relu", xd > 0)
    scale = np.where(xd > 0, 1.0, slope).astype(xd.dtype)
    return make_result("leaky_relu", xd * scale, (x,), lambda g: (g * scale,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * xd * (1.0 + 0.044715 * x2)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result("gelu", out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    z = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return make_result("mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return make_result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in xs], axis=axis), xs, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    shape = x.shape
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return make_result("slice", x.data[index], (x,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting on leading axes."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul shapes {ad.shape} and {bd.shape} do not align")

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result("matmul", ad @ bd, (a, b), backward)


# ---------------------------------------------------------------------------
# resampling and permutation
# ---------------------------------------------------------------------------

def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return make_result("upsample_nearest", out, (x,), backward)


def downsample_stride(x: Tensor, factor: int) -> Tensor:
    """Keep every ``factor``-th pixel (nearest downsampling)."""
    if factor == 1:
        return x
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, ::factor, ::factor] = g
        return (full,)

    return make_result("downsample_stride", x.data[:, :, ::factor, ::factor], (x,), backward)


def avg_pool(x: Tensor, factor: int) -> Tensor:
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool factor {factor} does not divide {(h, w)}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        g = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (g / (factor * factor),)

    return make_result("avg_pool", out, (x,), backward)


def gather_tokens(x: Tensor, index: np.ndarray) -> Tensor:
    """Reorder tokens: ``out[n, i] = x[n, index[n, i]]`` for x of shape (N, T, D).

    ``index`` must hold a permutation of 0..T-1 per batch row; the backward pass
    is the inverse permutation.
    """
    index = np.asarray(index)
    inv = np.argsort(index, axis=1, kind="stable")
    out = np.take_along_axis(x.data, index[:, :, None], axis=1)
    return make_result("gather", out, (x,),
                       lambda g: (np.take_along_axis(g, inv[:, :, None], axis=1),))


def scatter_tokens(x: Tensor, index: np.ndarray) -> Tensor:
    """Inverse of :func:`gather_tokens`: ``out[n, index[n, i]] = x[n, i]``."""
    index = np.asarray(index)
    inv = np.argsort(index, axis=1, kind="stable")
    return gather_tokens(x, inv)


# ---------------------------------------------------------------------------
# convolution and normalization
# ---------------------------------------------------------------------------

def _check_conv(x: Tensor, weight: Tensor, groups_ok: bool = False):
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects rank-4 input and weight, got {x.shape} and {weight.shape}")
    if not groups_ok and weight.shape[1] != x.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    Parameters
    ----------
    x : Tensor
        Input of shape (N, Cin, H, W).
    weight : Tensor
        Kernel of shape (Cout, Cin, kh, kw) with odd kh, kw.
    bias : Tensor, optional
        Shape (Cout,).
    stride, padding : int
        Same stride and zero padding on both spatial axes.
    """
    _check_conv(x, weight)
    cout, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel must be odd, got {(kh, kw)}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    n, _, h, w = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    wd = weight.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        xf = x.data.reshape(n, cin, h * w)
        w2 = wd.reshape(cout, cin)
        out = w2 @ xf
        if bias is not None:
            out += bias.data[:, None]

        def backward(g):
            g = g.reshape(n, cout, h * w)
            gx = (w2.T @ g).reshape(n, cin, h, w)
            gw = np.matmul(g, xf.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            grads = [gx, gw]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2)))
            return grads

        return make_result("conv2d", out.reshape(n, cout, h, w), inputs, backward)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, cin, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * kh * kw, ho * wo)
    w2 = wd.reshape(cout, -1)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]

    def backward(g):
        g = g.reshape(n, cout, ho * wo)
        gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gcols = (w2.T @ g).reshape(n, cin, kh, kw, ho, wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return make_result("conv2d", out.reshape(n, cout, ho, wo), inputs, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel 'same' convolution; weight has shape (C, 1, kh, kw), kh and kw odd."""
    _check_conv(x, weight, groups_ok=True)
    c, one, kh, kw = weight.shape
    if one != 1 or c != x.shape[1]:
        raise DimensionError(f"depthwise weight {weight.shape} does not match input {x.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"depthwise kernel must be odd, got {(kh, kw)}")
    n, _, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wd = weight.data[:, 0]
    out = np.zeros(x.shape, dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += wd[None, :, i, j, None, None] * xp[:, :, i:i + h, j:j + w]
    if bias is not None:
        out += bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty((c, kh, kw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + h, j:j + w] += wd[None, :, i, j, None, None] * g
                gw[:, i, j] = (g * xp[:, :, i:i + h, j:j + w]).sum(axis=(0, 2, 3))
        grads = [gxp[:, :, ph:ph + h, pw:pw + w], gw[:, None]]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result("depthwise_conv2d", out, inputs, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the channel vector at every spatial position of an (N, C, H, W) tensor."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm channels {c} do not match gamma {gamma.shape} / beta {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = xhat * gd + beta.data[None, :, None, None]

    def backward(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result("layer_norm", out, (x, gamma, beta), backward)


def global_mean_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    return mean(x, axis=(2, 3))


def constant(value, shape) -> Tensor:
    return Tensor(np.full(shape, value, dtype=get_dtype()))
