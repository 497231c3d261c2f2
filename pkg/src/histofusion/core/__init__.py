"""Tensor engine: tensors, tape, primitives, FFT and finite-difference checks."""
from . import functional
from .fft import ComplexGrid, fft2d, ifft2d
from .module import Module
from .sampling import bilinear_sample, deform_aggregate, default_base_offsets
from .tensor import Tape, Tensor, backward, default_dtype, no_grad

__all__ = [
    "ComplexGrid", "Module", "Tape", "Tensor", "backward", "bilinear_sample",
    "default_base_offsets", "default_dtype", "deform_aggregate", "fft2d", "functional",
    "ifft2d", "no_grad",
]
