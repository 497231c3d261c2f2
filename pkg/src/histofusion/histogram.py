"""Dynamic-range histogram self-attention for the bottleneck.

Tokens are sorted by their channel-mean intensity, cut into B contiguous bins
of (nearly) equal count, attended within each bin and scattered back to their
original positions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core import trace
from .core.module import Module, conv_init, ones, param, zeros
from .core.tensor import Tensor
from .errors import ConfigurationError, DimensionError, HistoFusionError


@dataclass(frozen=True)
class BinPartition:
    """Sorting permutation per batch item plus shared bin boundaries.

    ``perm[n, i]`` is the original token index placed at sorted slot ``i``;
    bin ``b`` covers sorted slots ``bounds[b]:bounds[b + 1]``.
    """

    perm: np.ndarray
    bounds: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.bounds) - 1

    @property
    def sizes(self) -> list[int]:
        return np.diff(self.bounds).tolist()

    def labels(self) -> np.ndarray:
        """Bin index of every original token, shape (N, T)."""
        n, t = self.perm.shape
        slot_bin = np.repeat(np.arange(self.bins), self.sizes)
        out = np.empty((n, t), dtype=np.int64)
        np.put_along_axis(out, self.perm, slot_bin[None].repeat(n, 0), axis=1)
        return out


def intensity_score(feat: Tensor) -> np.ndarray:
    """Channel mean per spatial token: (N, C, h, w) -> (N, h, w)."""
    if feat.ndim != 4 or feat.shape[1] < 1:
        raise DimensionError(f"expected (N, C, h, w) with C >= 1, got {feat.shape}")
    return feat.data.mean(axis=1)


def bin_bounds(tokens: int, bins: int) -> np.ndarray:
    if bins < 1 or bins > tokens:
        raise ConfigurationError(f"bin count {bins} must lie in [1, {tokens}]")
    size = tokens // bins
    bounds = np.arange(bins + 1) * size
    bounds[-1] = tokens
    return bounds


def partition(scores: np.ndarray, bins: int) -> BinPartition:
    """Stable ascending sort of (N, T) scores; ties keep original order."""
    scores = np.asarray(scores).reshape(scores.shape[0], -1)
    bounds = bin_bounds(scores.shape[1], bins)
    perm = np.argsort(scores, axis=1, kind="stable")
    part = BinPartition(perm, bounds)
    if trace.tracing():
        trace.record("histogram_bins", part.labels())
    return part


def to_tokens(feat: Tensor) -> Tensor:
    n, c, h, w = feat.shape
    return F.transpose(F.reshape(feat, (n, c, h * w)), (0, 2, 1))


def from_tokens(tokens: Tensor, h: int, w: int) -> Tensor:
    n, _, c = tokens.shape
    return F.reshape(F.transpose(tokens, (0, 2, 1)), (n, c, h, w))


def sort_partition(feat: Tensor, scores: np.ndarray, bins: int):
    """Reorder tokens of ``feat`` by ``scores`` and cut them into bins.

    Returns the :class:`BinPartition` and a list of ``bins`` tensors of shape
    (N, t_b, C).
    """
    part = partition(scores, bins)
    ordered = F.gather_tokens(to_tokens(feat), part.perm)
    chunks = [F.slice_axis(ordered, lo, hi, axis=1)
              for lo, hi in zip(part.bounds[:-1], part.bounds[1:])]
    return part, chunks


def inverse_permute(chunks, part: BinPartition) -> Tensor:
    """Concatenate per-bin token tensors and undo the sort: (N, T, C)."""
    total = int(np.sum([c.shape[1] for c in chunks]))
    if total != part.perm.shape[1] or len(chunks) != part.bins:
        raise HistoFusionError(
            f"bins hold {total} tokens in {len(chunks)} chunks; partition expects "
            f"{part.perm.shape[1]} in {part.bins}")
    return F.scatter_tokens(F.concat(chunks, axis=1), part.perm)


def bin_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """Multi-head softmax(Q K^T / sqrt(d_head)) V on (N, t, d) token tensors."""
    n, t, d = q.shape
    if k.shape != q.shape or v.shape[:2] != (n, t):
        raise DimensionError(f"q {q.shape}, k {k.shape}, v {v.shape} token counts differ")
    if d % heads:
        raise ConfigurationError(f"embedding dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x):
        return F.transpose(F.reshape(x, (n, t, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    logits = F.matmul(qh, F.transpose(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    out = F.matmul(F.softmax(logits, axis=-1), vh)
    return F.reshape(F.transpose(out, (0, 2, 1, 3)), (n, t, d))


class HistogramAttention(Module):
    """Pointwise QKV -> per-bin attention -> inverse permutation -> pointwise output."""

    def __init__(self, channels: int, bins: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ConfigurationError(f"width {channels} not divisible by {heads} heads")
        self._bins = bins
        self._heads = heads
        self.qkv_w = conv_init(rng, 3 * channels, channels, gain=0.5)
        self.qkv_b = zeros(3 * channels)
        self.out_w = conv_init(rng, channels, channels, gain=0.5)
        self.out_b = zeros(channels)

    def __call__(self, normed: Tensor, scores: np.ndarray) -> Tensor:
        n, c, h, w = normed.shape
        qkv = to_tokens(F.conv2d(normed, self.qkv_w, self.qkv_b))
        part = partition(scores, self._bins)
        ordered = F.gather_tokens(qkv, part.perm)
        outs = []
        for lo, hi in zip(part.bounds[:-1], part.bounds[1:]):
            chunk = F.slice_axis(ordered, lo, hi, axis=1)
            q = F.slice_axis(chunk, 0, c, axis=2)
            k = F.slice_axis(chunk, c, 2 * c, axis=2)
            v = F.slice_axis(chunk, 2 * c, 3 * c, axis=2)
            outs.append(bin_attention(q, k, v, self._heads))
        attended = from_tokens(inverse_permute(outs, part), h, w)
        return F.conv2d(attended, self.out_w, self.out_b)


class DualScaleGatedFFN(Module):
    """Expand, run 3x3 and 5x5 depthwise branches, gate the first by sigmoid of the second."""

    def __init__(self, channels: int, ratio: int, rng: np.random.Generator):
        hidden = channels * ratio
        self.in_w = conv_init(rng, hidden, channels)
        self.in_b = zeros(hidden)
        self.dw3_w = param(rng.standard_normal((hidden, 1, 3, 3)) / 3.0)
        self.dw3_b = zeros(hidden)
        self.dw5_w = param(rng.standard_normal((hidden, 1, 5, 5)) / 5.0)
        self.dw5_b = zeros(hidden)
        self.out_w = conv_init(rng, channels, hidden, gain=0.5)
        self.out_b = zeros(channels)

    def __call__(self, x: Tensor) -> Tensor:
        h = F.conv2d(x, self.in_w, self.in_b)
        a = F.depthwise_conv2d(h, self.dw3_w, self.dw3_b)
        b = F.depthwise_conv2d(h, self.dw5_w, self.dw5_b)
        return F.conv2d(a * F.sigmoid(b), self.out_w, self.out_b)


class HistogramBlock(Module):
    """Pre-norm residual block: histogram attention, then dual-scale gated FFN.

    Bin scores come from the block input before normalization; the
    per-position channel normalization would flatten every score to beta's mean.
    """

    def __init__(self, channels: int, bins: int, heads: int, rng: np.random.Generator,
                 ffn_ratio: int = 2, eps: float = 1e-6):
        self._eps = eps
        self.norm1_g = ones(channels)
        self.norm1_b = zeros(channels)
        self.attn = HistogramAttention(channels, bins, heads, rng)
        self.norm2_g = ones(channels)
        self.norm2_b = zeros(channels)
        self.ffn = DualScaleGatedFFN(channels, ffn_ratio, rng)

    def attention_branch(self, x: Tensor) -> Tensor:
        normed = F.layer_norm(x, self.norm1_g, self.norm1_b, self._eps)
        return self.attn(normed, intensity_score(x))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attention_branch(x)
        return x + self.ffn(F.layer_norm(x, self.norm2_g, self.norm2_b, self._eps))


def histogram_block(x: Tensor, block: HistogramBlock) -> Tensor:
    return block(x)
