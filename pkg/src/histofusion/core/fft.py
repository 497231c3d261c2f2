"""2-D discrete Fourier transforms over the spatial axes of (N, C, H, W) tensors.

Power-of-two axes go through an iterative radix-2 Cooley-Tukey transform; any
other length falls back to the O(n^2) direct DFT.  Arithmetic is complex128.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import DimensionError
from .functional import slice_axis, reshape
from .tensor import Tensor, make_result


@lru_cache(maxsize=64)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _dft_matrix(n: int, sign: int) -> np.ndarray:
    j = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(j, j) / n)


def _transform_last(a: np.ndarray, inverse: bool) -> np.ndarray:
    n = a.shape[-1]
    sign = 1 if inverse else -1
    if n & (n - 1):
        out = a @ _dft_matrix(n, sign).T
    else:
        lead = a.shape[:-1]
        out = a[..., _bit_reverse(n)]
        size = 2
        while size <= n:
            half = size // 2
            tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
            blocks = out.reshape(*lead, n // size, size)
            even = blocks[..., :half]
            odd = blocks[..., half:] * tw
            out = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
            size *= 2
    if inverse:
        out = out / n
    return out


def fft2(a: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT over the last two axes of a numpy array."""
    a = np.asarray(a, dtype=np.complex128)
    a = _transform_last(a, inverse=False)
    a = _transform_last(np.swapaxes(a, -1, -2), inverse=False)
    return np.swapaxes(a, -1, -2)


def ifft2(a: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT (with 1/(H*W) scaling) over the last two axes."""
    a = np.asarray(a, dtype=np.complex128)
    a = _transform_last(a, inverse=True)
    a = _transform_last(np.swapaxes(a, -1, -2), inverse=True)
    return np.swapaxes(a, -1, -2)


@dataclass
class ComplexGrid:
    """Per-channel 2-D spectra stored as separate real and imaginary tensors."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"real {self.real.shape} and imag {self.imag.shape} shapes differ")

    @property
    def shape(self):
        return self.real.shape

    def scale(self, mask: Tensor) -> "ComplexGrid":
        """Multiply by a real-valued (broadcastable) mask."""
        return ComplexGrid(self.real * mask, self.imag * mask)

    def numpy(self) -> np.ndarray:
        return self.real.data.astype(np.complex128) + 1j * self.imag.data


def _fft2d_stacked(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"fft2d expects (N, C, H, W), got {x.shape}")
    h, w = x.shape[-2:]
    spec = fft2(x.data)

    def backward(g):
        z = g[0].astype(np.complex128) + 1j * g[1]
        return ((h * w) * ifft2(z).real,)

    return make_result("fft2d", np.stack([spec.real, spec.imag]), (x,), backward)


def fft2d(x: Tensor) -> ComplexGrid:
    stacked = _fft2d_stacked(x)
    shape = x.shape
    real = reshape(slice_axis(stacked, 0, 1, axis=0), shape)
    imag = reshape(slice_axis(stacked, 1, 2, axis=0), shape)
    return ComplexGrid(real, imag)


def ifft2d(spec: ComplexGrid) -> Tensor:
    """Real part of the inverse transform."""
    real, imag = spec.real, spec.imag
    h, w = real.shape[-2:]
    z = real.data.astype(np.complex128) + 1j * imag.data
    out = ifft2(z).real

    def backward(g):
        gf = fft2(g) / (h * w)
        return gf.real, gf.imag

    return make_result("ifft2d", out, (real, imag), backward)
