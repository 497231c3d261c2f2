"""Fourier-domain feature splitting, adaptive mixing and frequency-guided fusion.

Holds both the auxiliary frequency-aware branch of the dehazing network and
the post-hoc refinement module that turns a stage-1 image into the final one.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import functional as F
from .core.fft import fft2d, ifft2d
from .core.module import Module, conv_init, param, zeros
from .core.tensor import Tensor
from .errors import ConfigurationError, DimensionError


@lru_cache(maxsize=32)
def _radius(h: int, w: int) -> np.ndarray:
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.sqrt(fy ** 2 + fx ** 2) / np.sqrt(0.5)


def radial_frequency(h: int, w: int) -> np.ndarray:
    """Distance from DC in unshifted FFT layout, scaled so the (Nyquist, Nyquist) bin is 1."""
    return _radius(h, w)


class FreqMask(Module):
    """Learnable radial low-pass ``sigmoid(sharpness * (cutoff - rho))``."""

    def __init__(self, cutoff: float = 0.25, sharpness: float = 20.0, channels: int = 1):
        if sharpness <= 0:
            raise ConfigurationError(f"mask sharpness must be positive, got {sharpness}")
        self._sharpness = float(sharpness)
        self.cutoff = param(np.full(channels, cutoff))

    @property
    def sharpness(self) -> float:
        return self._sharpness

    def realize(self, h: int, w: int) -> Tensor:
        c = self.cutoff.shape[0]
        rho = Tensor(radial_frequency(h, w)[None, None])
        z = (F.reshape(self.cutoff, (1, c, 1, 1)) - rho) * self._sharpness
        return F.sigmoid(z)


class MixGate(Module):
    """Scalar convex blend weight ``alpha = sigmoid(theta)``."""

    def __init__(self, theta: float = 0.0):
        self.theta = param(np.array([theta]))

    def alpha(self) -> Tensor:
        return F.sigmoid(self.theta)


def mix_fuse(enc: Tensor, dec: Tensor, gate: MixGate) -> Tensor:
    """``alpha * enc + (1 - alpha) * dec``, evaluated as ``dec + alpha * (enc - dec)``."""
    if enc.shape != dec.shape:
        raise DimensionError(f"mix_fuse shapes differ: {enc.shape} vs {dec.shape}")
    alpha = F.reshape(gate.alpha(), (1, 1, 1, 1))
    return dec + alpha * (enc - dec)


def freq_decompose(feat: Tensor, mask: FreqMask) -> tuple[Tensor, Tensor]:
    """Split ``feat`` into (low, high) with the realized mask and its complement."""
    h, w = feat.shape[-2:]
    m = mask.realize(h, w)
    spec = fft2d(feat)
    low = ifft2d(spec.scale(m))
    high = ifft2d(spec.scale(1.0 - m))
    return low, high


class FreqFuse(Module):
    """Concat -> pointwise projection -> channel gate from pooled band statistics -> residual add."""

    def __init__(self, channels: int, rng: np.random.Generator, freq_channels: int | None = None):
        freq_channels = channels if freq_channels is None else freq_channels
        self._channels = channels
        self._freq_channels = freq_channels
        if freq_channels != channels:
            self.align_w = conv_init(rng, channels, freq_channels)
            self.align_b = zeros(channels)
        self.proj_w = zeros(channels, 3 * channels, 1, 1)
        self.proj_b = zeros(channels)
        self.gate_w = zeros(channels, 2 * channels, 1, 1)
        self.gate_b = zeros(channels)

    def __call__(self, mix: Tensor, low: Tensor, high: Tensor) -> Tensor:
        if mix.shape[1] != self._channels or low.shape[1] != self._freq_channels \
                or high.shape[1] != self._freq_channels:
            raise ConfigurationError(
                f"freq_fuse expects {self._channels}/{self._freq_channels} channels, got "
                f"mix {mix.shape[1]}, low {low.shape[1]}, high {high.shape[1]}")
        if low.shape[-2:] != mix.shape[-2:]:
            factor = mix.shape[-1] // low.shape[-1]
            low, high = F.upsample_nearest(low, factor), F.upsample_nearest(high, factor)
        if self._freq_channels != self._channels:
            low = F.conv2d(low, self.align_w, self.align_b)
            high = F.conv2d(high, self.align_w, self.align_b)
        proj = F.conv2d(F.concat([mix, low, high], axis=1), self.proj_w, self.proj_b)
        stats = F.concat([F.mean(low, axis=(2, 3), keepdims=True),
                          F.mean(high, axis=(2, 3), keepdims=True)], axis=1)
        gate = F.sigmoid(F.conv2d(stats, self.gate_w, self.gate_b))
        return mix + gate * proj


def freq_fuse(mix: Tensor, low: Tensor, high: Tensor, fuser: FreqFuse) -> Tensor:
    return fuser(mix, low, high)


class FrequencyBranch(Module):
    """Shallow conv stacks over the (low, high) split of the image at each skip scale.

    ``ratios``/``widths`` list the skip scales; each one also owns the mix gate
    that blends its features into the encoder skip.
    """

    def __init__(self, ratios, widths, rng: np.random.Generator, sharpness: float = 20.0,
                 per_channel_mask: bool = False):
        self._ratios = list(ratios)
        self.masks = [FreqMask(0.25, sharpness, 3 if per_channel_mask else 1) for _ in ratios]
        self.conv1_w = [conv_init(rng, d, 6, 3, 3) for d in widths]
        self.conv1_b = [zeros(d) for d in widths]
        self.conv2_w = [conv_init(rng, d, d, 3, 3, gain=0.5) for d in widths]
        self.conv2_b = [zeros(d) for d in widths]
        self.gates = [MixGate() for _ in ratios]

    def features(self, image: Tensor) -> list[Tensor]:
        feats = []
        for i, ratio in enumerate(self._ratios):
            img = F.avg_pool(image, ratio)
            low, high = freq_decompose(img, self.masks[i])
            h = F.gelu(F.conv2d(F.concat([low, high], axis=1), self.conv1_w[i],
                                self.conv1_b[i], padding=1))
            feats.append(F.conv2d(h, self.conv2_w[i], self.conv2_b[i], padding=1))
        return feats


class RefinementModule(Module):
    """Residual image correction from multi-scale mixes and a Fourier split of F_d.

    Every scale's (encoder, decoder) pair is blended by a :class:`MixGate`,
    brought to full resolution and width, and summed into F_mix.  F_d is split
    by one learnable mask; :class:`FreqFuse` combines the three streams and a
    3x3 head emits an RGB residual added to the stage-1 image.
    """

    def __init__(self, ratios, widths, rng: np.random.Generator, sharpness: float = 20.0,
                 per_channel_mask: bool = False):
        d0 = widths[0]
        self._ratios = list(ratios)
        self.gates = [MixGate() for _ in ratios]
        self.lift_w = [conv_init(rng, d0, d, gain=0.5) for d in widths[1:]]
        self.lift_b = [zeros(d0) for _ in widths[1:]]
        self.mask = FreqMask(0.25, sharpness, d0 if per_channel_mask else 1)
        self.fuse = FreqFuse(d0, rng)
        self.head_w = zeros(3, d0, 3, 3)
        self.head_b = zeros(3)

    def __call__(self, feat_d: Tensor, enc_feats, dec_feats, stage1: Tensor) -> Tensor:
        mixed = None
        for i, ratio in enumerate(self._ratios):
            m = mix_fuse(enc_feats[i], dec_feats[i], self.gates[i])
            if i > 0:
                m = F.upsample_nearest(F.conv2d(m, self.lift_w[i - 1], self.lift_b[i - 1]), ratio)
            mixed = m if mixed is None else mixed + m
        low, high = freq_decompose(feat_d, self.mask)
        fused = self.fuse(mixed, low, high)
        residual = F.conv2d(fused, self.head_w, self.head_b, padding=1)
        return F.clamp(stage1 + residual, 0.0, 1.0)


def refine_module(feat_d: Tensor, enc_feats, dec_feats, stage1: Tensor,
                  module: RefinementModule) -> Tensor:
    return module(feat_d, enc_feats, dec_feats, stage1)
