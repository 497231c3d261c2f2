"""DCNv4-style deformable aggregation and the DCNFormer block.

The aggregation samples each channel group at ``p0 + p_k + delta_gk`` with
bilinear interpolation, weights the K samples by raw (unnormalized)
modulation scalars and mixes the groups with a pointwise projection.
Offsets and modulation are predicted from the input itself by a depthwise
3x3 convolution followed by two pointwise heads.
"""
from __future__ import annotations

import math

import numpy as np

from .core import functional as F
from .core.module import Module, conv_init, ones, param, zeros
from .core.sampling import default_base_offsets, deform_aggregate
from .core.tensor import Tensor, no_grad
from .errors import ConfigurationError


class DCNv4(Module):
    """Deformable aggregation layer.

    Parameters
    ----------
    channels : int
        Input and output width; must be divisible by ``groups``.
    groups : int
        Number of channel groups G, each with its own offsets and modulation.
    points : int
        Sampling points K per group.
    rng : numpy.random.Generator
        Source for the depthwise head and projection init.
    base_offsets : array of shape (K, 2), optional
        Fixed (dy, dx) kernel grid; defaults to the centered sqrt(K) square.
    """

    def __init__(self, channels: int, groups: int, points: int, rng: np.random.Generator,
                 base_offsets=None):
        if channels % groups:
            raise ConfigurationError(f"channels {channels} not divisible by groups {groups}")
        if base_offsets is None:
            base_offsets = default_base_offsets(points)
        base_offsets = np.asarray(base_offsets, dtype=np.int64).reshape(-1, 2)
        if base_offsets.shape[0] != points:
            raise ConfigurationError(f"{base_offsets.shape[0]} base offsets for K={points}")
        self._groups = groups
        self._points = points
        self._base = base_offsets
        gk = groups * points
        self.head_dw = param(rng.standard_normal((channels, 1, 3, 3)) / 3.0)
        self.head_dw_bias = zeros(channels)
        # heads start at zero so aggregation begins un-deformed and silent
        self.offset_w = zeros(2 * gk, channels, 1, 1)
        self.offset_b = zeros(2 * gk)
        self.mod_w = zeros(gk, channels, 1, 1)
        self.mod_b = zeros(gk)
        self.proj_w = conv_init(rng, channels, channels)
        self.proj_b = zeros(channels)

    @property
    def groups(self) -> int:
        return self._groups

    @property
    def points(self) -> int:
        return self._points

    @property
    def base_offsets(self) -> np.ndarray:
        return self._base

    def heads(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Predict (offsets, modulation) from ``x``."""
        hidden = F.gelu(F.depthwise_conv2d(x, self.head_dw, self.head_dw_bias))
        offsets = F.conv2d(hidden, self.offset_w, self.offset_b)
        modulation = F.conv2d(hidden, self.mod_w, self.mod_b)
        return offsets, modulation

    def __call__(self, x: Tensor) -> Tensor:
        return dcnv4_forward(x, self)


def _check_groups(x: Tensor, layer: DCNv4) -> None:
    if x.ndim != 4 or x.shape[1] % layer.groups or x.shape[1] != layer.proj_w.shape[0]:
        raise ConfigurationError(
            f"input {x.shape} incompatible with {layer.groups} groups / "
            f"{layer.proj_w.shape[0]} channels")


def dcnv4_forward(x: Tensor, layer: DCNv4) -> Tensor:
    _check_groups(x, layer)
    offsets, modulation = layer.heads(x)
    agg = deform_aggregate(x, offsets, modulation, layer.groups, layer.base_offsets)
    return F.conv2d(agg, layer.proj_w, layer.proj_b)


def dcnv4_oracle(x: Tensor, layer: DCNv4) -> np.ndarray:
    """Loop transcription of the aggregation, in float64.

    Heads are evaluated with the regular conv ops; sampling, modulation and
    projection are explicit loops over positions, groups and points.
    """
    _check_groups(x, layer)
    with no_grad():
        offsets, modulation = layer.heads(x)
    xd = x.data.astype(np.float64)
    off = offsets.data.astype(np.float64)
    mod = modulation.data.astype(np.float64)
    w = layer.proj_w.data[:, :, 0, 0].astype(np.float64)
    b = layer.proj_b.data.astype(np.float64)
    n_, c, h, wd = xd.shape
    G, K = layer.groups, layer.points
    cg = c // G

    def pixel(n, ch, yy, xx):
        if 0 <= yy < h and 0 <= xx < wd:
            return xd[n, ch, yy, xx]
        return 0.0

    def sample(n, ch, py, px):
        y0, x0 = math.floor(py), math.floor(px)
        ly, lx = py - y0, px - x0
        return ((1 - ly) * (1 - lx) * pixel(n, ch, y0, x0)
                + (1 - ly) * lx * pixel(n, ch, y0, x0 + 1)
                + ly * (1 - lx) * pixel(n, ch, y0 + 1, x0)
                + ly * lx * pixel(n, ch, y0 + 1, x0 + 1))

    out = np.zeros_like(xd)
    for n in range(n_):
        for y in range(h):
            for xx in range(wd):
                agg = np.zeros(c)
                for g in range(G):
                    for k in range(K):
                        dy, dx = layer.base_offsets[k]
                        oc = 2 * (g * K + k)
                        px = xx + dx + off[n, oc, y, xx]
                        py = y + dy + off[n, oc + 1, y, xx]
                        m = mod[n, g * K + k, y, xx]
                        for j in range(cg):
                            agg[g * cg + j] += m * sample(n, g * cg + j, py, px)
                out[n, :, y, xx] = w @ agg + b
    return out


class FeedForward(Module):
    """Pointwise expand -> GELU -> pointwise project."""

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        hidden = channels * ratio
        self.w1 = conv_init(rng, hidden, channels)
        self.b1 = zeros(hidden)
        self.w2 = conv_init(rng, channels, hidden, gain=0.5)
        self.b2 = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(F.gelu(F.conv2d(x, self.w1, self.b1)), self.w2, self.b2)


class DCNFormerBlock(Module):
    """Pre-norm residual block with deformable aggregation in place of attention."""

    def __init__(self, channels: int, groups: int, points: int, rng: np.random.Generator,
                 ffn_ratio: int = 2, eps: float = 1e-6):
        self._eps = eps
        self.norm1_g = ones(channels)
        self.norm1_b = zeros(channels)
        self.dcn = DCNv4(channels, groups, points, rng)
        self.norm2_g = ones(channels)
        self.norm2_b = zeros(channels)
        self.ffn = FeedForward(channels, ffn_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.dcn(F.layer_norm(x, self.norm1_g, self.norm1_b, self._eps))
        return x + self.ffn(F.layer_norm(x, self.norm2_g, self.norm2_b, self._eps))


def dcnformer_block(x: Tensor, block: DCNFormerBlock) -> Tensor:
    return block(x)
