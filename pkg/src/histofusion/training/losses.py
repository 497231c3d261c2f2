"""Composite restoration loss, its components, and image-quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core import functional as F
from ..core.module import Module, conv_init, zeros
from ..core.tensor import Tensor, as_tensor, make_result, no_grad
from ..errors import DimensionError, ParameterError, RangeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 100.0
PERCEPTUAL_SEED = 1234


def _same_shape(pred: Tensor, target: Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"{what}: prediction {pred.shape} vs target {target.shape}")


def l1_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "l1_loss")
    return F.mean(F.abs(pred - target))


# ---------------------------------------------------------------------------
# SSIM / PSNR
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


@lru_cache(maxsize=None)
def _band(n: int, size: int, sigma: float) -> np.ndarray:
    # (n - size + 1, n) matrix applying the 1-D window at every valid offset
    g = gaussian_window(size, sigma)
    out = np.zeros((n - size + 1, n))
    for i in range(n - size + 1):
        out[i, i:i + size] = g
    return out


def gaussian_filter_valid(x: Tensor, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Tensor:
    """Separable Gaussian blur keeping only fully covered windows."""
    h, w = x.shape[-2:]
    if h < size or w < size:
        raise DimensionError(f"image {(h, w)} smaller than the {size}x{size} SSIM window")
    by = _band(h, size, sigma).astype(x.dtype)
    bx = _band(w, size, sigma).astype(x.dtype)
    out = by @ x.data @ bx.T
    return make_result("gaussian_filter", out, (x,), lambda g: (by.T @ g @ bx,))


def _check_range(*images: Tensor) -> None:
    for img in images:
        lo, hi = float(img.data.min()), float(img.data.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise RangeError(f"image values must lie in [0, 1], got [{lo:.4g}, {hi:.4g}]")


def ssim_map(pred: Tensor, target: Tensor) -> Tensor:
    blur = gaussian_filter_valid
    mu_x, mu_y = blur(pred), blur(target)
    sxx = blur(pred * pred) - mu_x * mu_x
    syy = blur(target * target) - mu_y * mu_y
    sxy = blur(pred * target) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(pred, target) -> Tensor:
    """Differentiable mean SSIM over batch, channels and valid positions."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "ssim")
    _check_range(pred, target)
    return F.mean(ssim_map(pred, target))


def ssim_loss(pred, target) -> Tensor:
    return 1.0 - ssim(pred, target)


def ssim_metric(pred, target) -> float:
    with no_grad():
        return float(ssim(pred, target).item())


def psnr_metric(pred, target) -> float:
    """Mean over images of 10*log10(1/MSE); identical images report PSNR_CAP."""
    p = np.asarray(as_tensor(pred).data, dtype=np.float64)
    t = np.asarray(as_tensor(target).data, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"psnr: prediction {p.shape} vs target {t.shape}")
    _check_range(as_tensor(pred), as_tensor(target))
    if p.ndim == 3:
        p, t = p[None], t[None]
    vals = []
    for a, b in zip(p, t):
        mse = float(np.mean((a - b) ** 2))
        vals.append(PSNR_CAP if mse == 0 else min(PSNR_CAP, 10 * math.log10(1.0 / mse)))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# perceptual distance on frozen random features
# ---------------------------------------------------------------------------

class FeatureExtractor(Module):
    """Three conv stages (full, 1/2, 1/4 resolution) with fixed random weights."""

    def __init__(self, seed: int = PERCEPTUAL_SEED, widths=(8, 16, 32)):
        rng = np.random.default_rng(seed)
        chans = (3,) + tuple(widths)
        self.weights = [conv_init(rng, chans[i + 1], chans[i], 3, 3) for i in range(3)]
        self.biases = [zeros(chans[i + 1]) for i in range(3)]
        for p in self.weights + self.biases:
            p.requires_grad = False

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = F.relu(F.conv2d(x, w, b, stride=1 if i == 0 else 2, padding=1))
            feats.append(x)
        return feats


@lru_cache(maxsize=None)
def default_extractor() -> FeatureExtractor:
    return FeatureExtractor()


def perceptual_loss(pred, target, extractor: FeatureExtractor | None = None) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "perceptual_loss")
    extractor = extractor or default_extractor()
    fp, ft = extractor(pred), extractor(target)
    terms = [F.mean(F.abs(a - b)) for a, b in zip(fp, ft)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


# ---------------------------------------------------------------------------
# adversarial term
# ---------------------------------------------------------------------------

class PatchDiscriminator(Module):
    """Four strided 3x3 conv layers producing a map of real/fake logits."""

    def __init__(self, seed: int = 0, widths=(16, 32, 64)):
        rng = np.random.default_rng([seed, 99])
        chans = (3,) + tuple(widths)
        self.weights = [conv_init(rng, chans[i + 1], chans[i], 3, 3) for i in range(3)]
        self.biases = [zeros(chans[i + 1]) for i in range(3)]
        self.out_w = conv_init(rng, 1, chans[-1], 3, 3, gain=0.5)
        self.out_b = zeros(1)

    def logits(self, x: Tensor) -> Tensor:
        for w, b in zip(self.weights, self.biases):
            x = F.leaky_relu(F.conv2d(x, w, b, stride=2, padding=1), 0.2)
        return F.conv2d(x, self.out_w, self.out_b, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return F.sigmoid(self.logits(x))


def bce_with_logits(logits: Tensor, real: bool) -> Tensor:
    # -log(sigmoid(z)) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    return F.mean(F.softplus(-1.0 * logits if real else logits))


def adversarial_loss(pred, discriminator: PatchDiscriminator) -> Tensor:
    """Non-saturating generator loss: BCE of D(pred) against the real label."""
    return bce_with_logits(discriminator.logits(as_tensor(pred)), real=True)


def discriminator_loss(clean, fake, discriminator: PatchDiscriminator) -> Tensor:
    real_term = bce_with_logits(discriminator.logits(as_tensor(clean)), real=True)
    fake_term = bce_with_logits(discriminator.logits(as_tensor(fake).detach()), real=False)
    return 0.5 * (real_term + fake_term)


# ---------------------------------------------------------------------------
# weighted total
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.2      # SSIM
    beta: float = 0.01      # perceptual
    gamma: float = 0.0005   # adversarial

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")


COMPONENTS = ("l1", "ssim", "perceptual", "adversarial")


def loss_terms(pred, target, discriminator: PatchDiscriminator,
               extractor: FeatureExtractor | None = None) -> dict[str, Tensor]:
    return {
        "l1": l1_loss(pred, target),
        "ssim": ssim_loss(pred, target),
        "perceptual": perceptual_loss(pred, target, extractor),
        "adversarial": adversarial_loss(pred, discriminator),
    }


def weighted_sum(terms: dict[str, Tensor], weights: LossWeights) -> Tensor:
    return (terms["l1"] + weights.alpha * terms["ssim"] + weights.beta * terms["perceptual"]
            + weights.gamma * terms["adversarial"])


def total_loss(pred, target, weights: LossWeights | None, discriminator: PatchDiscriminator,
               extractor: FeatureExtractor | None = None) -> Tensor:
    return weighted_sum(loss_terms(pred, target, discriminator, extractor),
                        weights or LossWeights())
