"""Finite-difference gradient checks for every differentiable operator.

Each case builds float64 inputs and a scalar loss for a given seed; zero
initialized heads are filled with small random values first so that every
path through the operator carries gradient.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import BottleneckConfig, DeformConfig, ModelConfig, ScaleConfig
from .core import functional as F
from .core.gradcheck import ProbeResult, check_gradients, worst
from .core.module import Module
from .core.sampling import bilinear_sample
from .core.tensor import Tensor, default_dtype
from .deformable import DCNv4, dcnv4_forward
from .frequency import FreqFuse, FreqMask, MixGate, freq_decompose, freq_fuse, mix_fuse
from .histogram import HistogramBlock, histogram_block
from .network import build_model, forward
from .training.losses import FeatureExtractor, LossWeights, PatchDiscriminator, total_loss

RTOL = 1e-2
ATOL = 1e-4
STEP = 1e-3
PROBES = 20
SEEDS = (0, 1, 2, 3, 4)

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[tuple[str, Tensor]]]]


def _var(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _randomize(module: Module, rng: np.random.Generator, scale: float = 0.2) -> None:
    for _, p in module.named_parameters():
        p.data[...] += rng.standard_normal(p.shape) * scale


def _center_offsets(module: Module, rng: np.random.Generator) -> None:
    """Move deformable sample points near half-pixel positions.

    Bilinear interpolation is not differentiable where a sample crosses an
    integer grid line, and zero offsets put every sample exactly there.  Half
    pixel biases with small offset weights keep samples inside cells so the
    finite differences probe a differentiable point.
    """
    for name, p in module.named_parameters():
        if name.endswith("offset_b"):
            p.data[...] = 0.5 + rng.uniform(-0.1, 0.1, p.shape)
        elif name.endswith("offset_w"):
            p.data[...] = rng.standard_normal(p.shape) * 0.02


def _project(rng: np.random.Generator, out: Tensor) -> np.ndarray:
    # fixed random linear functional turns any output into a scalar loss
    return rng.standard_normal(out.shape)


def _scalar(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    weights = _project(rng, fn())
    return lambda: F.sum(fn() * weights)


def case_conv2d(rng):
    x = _var(rng, 2, 3, 7, 7)
    w = _var(rng, 4, 3, 3, 3)
    b = _var(rng, 4)
    loss = _scalar(lambda: F.conv2d(x, w, b, stride=2, padding=1), rng)
    return loss, [("x", x), ("weight", w), ("bias", b)]


def case_layer_norm(rng):
    x = _var(rng, 2, 6, 4, 4)
    g = _var(rng, 6)
    b = _var(rng, 6)
    loss = _scalar(lambda: F.layer_norm(x, g, b), rng)
    return loss, [("x", x), ("gamma", g), ("beta", b)]


def case_bilinear_sample(rng):
    x = _var(rng, 1, 2, 5, 5)
    # stay clear of integer coordinates where the interpolant has kinks
    px = Tensor(np.array(rng.uniform(-0.8, 4.8) + 0.0), requires_grad=True)
    py = Tensor(np.array(rng.uniform(-0.8, 4.8) + 0.0), requires_grad=True)
    for t in (px, py):
        v = float(t.data.reshape(-1)[0])
        frac = v - np.floor(v)
        if min(frac, 1 - frac) < 0.05:
            t.data[...] += 0.1

    def loss():
        total = None
        for n, c in ((0, 0), (0, 1)):
            s = bilinear_sample(x, px, py, n, c) * (1.0 + c)
            total = s if total is None else total + s
        return total
    return loss, [("x", x), ("px", px), ("py", py)]


def case_dcnv4(rng):
    layer = DCNv4(8, 2, 9, rng)
    _randomize(layer, rng, 0.3)
    _center_offsets(layer, rng)
    x = _var(rng, 2, 8, 5, 5)
    loss = _scalar(lambda: dcnv4_forward(x, layer), rng)
    return loss, [("x", x)] + list(layer.named_parameters())


def case_histogram_block(rng):
    block = HistogramBlock(8, 4, 2, rng)
    _randomize(block, rng, 0.2)
    x = _var(rng, 1, 8, 4, 4)
    loss = _scalar(lambda: histogram_block(x, block), rng)
    return loss, [("x", x)] + list(block.named_parameters())


def case_mix_fuse(rng):
    enc = _var(rng, 2, 4, 3, 3)
    dec = _var(rng, 2, 4, 3, 3)
    gate = MixGate(float(rng.standard_normal()))
    loss = _scalar(lambda: mix_fuse(enc, dec, gate), rng)
    return loss, [("enc", enc), ("dec", dec), ("theta", gate.theta)]


def case_freq_decompose(rng):
    x = _var(rng, 2, 3, 8, 8)
    mask = FreqMask(float(rng.uniform(0.2, 0.6)), 20.0, 3)
    w_low = rng.standard_normal(x.shape)
    w_high = rng.standard_normal(x.shape)

    def loss():
        low, high = freq_decompose(x, mask)
        return F.sum(low * w_low) + F.sum(high * w_high)
    return loss, [("x", x), ("cutoff", mask.cutoff)]


def case_freq_fuse(rng):
    fuser = FreqFuse(4, rng, freq_channels=2)
    _randomize(fuser, rng, 0.3)
    mix = _var(rng, 2, 4, 4, 4)
    low = _var(rng, 2, 2, 2, 2)
    high = _var(rng, 2, 2, 2, 2)
    loss = _scalar(lambda: freq_fuse(mix, low, high, fuser), rng)
    return loss, [("mix", mix), ("low", low), ("high", high)] + list(fuser.named_parameters())


def tiny_config(seed: int) -> ModelConfig:
    return ModelConfig(scales=(ScaleConfig(1, 4, 1), ScaleConfig(2, 8, 1)),
                       bottleneck=BottleneckConfig(blocks=1, bins=2, heads=1),
                       deform=DeformConfig(groups=2, points=9), seed=seed)


def case_full_model(rng):
    model = build_model(tiny_config(int(rng.integers(1000))))
    _randomize(model, rng, 0.05)
    _center_offsets(model, rng)
    # a small refinement residual keeps the final clamp away from its bounds
    model.refine.head_w.data[...] *= 0.05
    image = Tensor(rng.uniform(0.1, 0.9, (1, 3, 16, 16)), requires_grad=True)
    target = Tensor(rng.uniform(0.1, 0.9, (1, 3, 16, 16)))
    disc = PatchDiscriminator(seed=int(rng.integers(1000)))
    extractor = FeatureExtractor(seed=int(rng.integers(1000)))
    # larger adversarial and perceptual weights so those paths are visible to the check
    weights = LossWeights(0.2, 0.1, 0.05)

    def loss():
        _, out, _ = forward(model, image)
        return total_loss(out, target, weights, disc, extractor)
    return loss, [("image", image)] + list(model.named_parameters())


CASES: dict[str, Case] = {
    "conv2d": case_conv2d,
    "layer_norm": case_layer_norm,
    "bilinear_sample": case_bilinear_sample,
    "dcnv4_forward": case_dcnv4,
    "histogram_block": case_histogram_block,
    "mix_fuse": case_mix_fuse,
    "freq_decompose": case_freq_decompose,
    "freq_fuse": case_freq_fuse,
    "full_model_loss": case_full_model,
}


@dataclass
class CaseReport:
    name: str
    seed: int
    probes: int
    failures: list[ProbeResult]
    max_rel: float
    seconds: float
    short: list[str] = field(default_factory=list)
    reduced: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures and not self.short


def run_case(name: str, seed: int, probes: int = PROBES, h: float = STEP,
             rtol: float = RTOL, atol: float = ATOL) -> CaseReport:
    start = time.perf_counter()
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    with default_dtype(np.float64):
        loss, tensors = CASES[name](rng)
        results = check_gradients(loss, tensors, rng, probes=probes, h=h)
    fails = worst(results, rtol, atol)
    max_rel = max((r.rel_err for r in results if r.abs_err > atol), default=0.0)
    counts = Counter(r.name for r in results)
    short = [n for n, t in tensors if counts[n] < min(probes, t.size)]
    reduced = sum(r.step < h for r in results)
    return CaseReport(name, seed, len(results), fails, max_rel, time.perf_counter() - start,
                      short, reduced)


def run_suite(names=None, seeds=SEEDS, probes: int = PROBES, report=print) -> list[CaseReport]:
    reports = []
    for name in names or CASES:
        for seed in seeds:
            r = run_case(name, seed, probes)
            reports.append(r)
            if report is not None:
                status = "ok" if r.ok else f"FAIL ({len(r.failures)} probes, {len(r.short)} short)"
                report(f"{name:18s} seed={seed} probes={r.probes:4d} reduced={r.reduced:3d} "
                       f"max_rel={r.max_rel:.2e} {r.seconds:6.2f}s {status}")
    return reports
