"""U-shaped dehazing network with optional frequency branch and refinement stage."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .core import functional as F
from .core.module import Module, conv_init, zeros
from .core.tensor import Tensor
from .deformable import DCNFormerBlock
from .errors import InputError
from .frequency import FrequencyBranch, RefinementModule, mix_fuse
from .histogram import HistogramBlock


def _rng(seed: int, part: int) -> np.random.Generator:
    # one stream per component so ablations leave shared weights untouched
    return np.random.default_rng([seed, part])


class Stage(Module):
    def __init__(self, width: int, count: int, cfg: ModelConfig, rng: np.random.Generator):
        self.blocks = [DCNFormerBlock(width, cfg.deform.groups, cfg.deform.points, rng,
                                      cfg.ffn_ratio) for _ in range(count)]

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


@dataclass
class Intermediates:
    encoder: list[Tensor] = field(default_factory=list)
    decoder: list[Tensor] = field(default_factory=list)
    frequency: list[Tensor] = field(default_factory=list)
    feature: Tensor | None = None


class HistoFusionNet(Module):
    """Dehazing network (stage 1) plus frequency-adaptive refinement (stage 2)."""

    def __init__(self, config: ModelConfig):
        cfg = config.validate()
        self._config = cfg
        ratios, widths = cfg.ratios, cfg.widths
        S = len(cfg.scales)
        seed = cfg.seed

        rng = _rng(seed, 0)
        self.stem_w = conv_init(rng, widths[0], 3, 3, 3)
        self.stem_b = zeros(widths[0])
        self.encoder = [Stage(s.width, s.blocks, cfg, _rng(seed, 10 + i))
                        for i, s in enumerate(cfg.scales)]
        rng = _rng(seed, 1)
        self.down_w = [conv_init(rng, widths[i + 1], widths[i], 3, 3) for i in range(S - 1)]
        self.down_b = [zeros(widths[i + 1]) for i in range(S - 1)]
        if cfg.ablation.use_histogram_blocks:
            rng = _rng(seed, 2)
            self.histogram = [HistogramBlock(widths[-1], cfg.bottleneck.bins, cfg.bottleneck.heads,
                                             rng, cfg.ffn_ratio)
                              for _ in range(cfg.bottleneck.blocks)]
        else:
            self.histogram = []
        rng = _rng(seed, 3)
        self.up_w = [conv_init(rng, widths[i], widths[i + 1]) for i in range(S - 1)]
        self.up_b = [zeros(widths[i]) for i in range(S - 1)]
        self.decoder = [Stage(cfg.scales[i].width, cfg.scales[i].blocks, cfg, _rng(seed, 30 + i))
                        for i in range(S - 1)]
        if cfg.ablation.use_frequency_branch and S > 1:
            self.freq_branch = FrequencyBranch(ratios[:-1], widths[:-1], _rng(seed, 4),
                                               cfg.refine.sharpness, cfg.refine.per_channel_mask)
        else:
            self.freq_branch = None
        rng = _rng(seed, 5)
        self.head_w = conv_init(rng, 3, widths[0], 3, 3, gain=0.5)
        self.head_b = zeros(3)
        if cfg.ablation.use_refinement:
            self.refine = RefinementModule(ratios, widths, _rng(seed, 6), cfg.refine.sharpness,
                                           cfg.refine.per_channel_mask)
        else:
            self.refine = None

    @property
    def config(self) -> ModelConfig:
        return self._config

    def refinement_parameters(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith("refine.")]

    # -- forward ---------------------------------------------------------
    def dehaze(self, image: Tensor) -> tuple[Tensor, Intermediates]:
        """Stage-1 network theta: returns the bounded image and internal features."""
        cfg = self._config
        ratios = cfg.ratios
        S = len(ratios)
        inter = Intermediates()
        x = F.conv2d(image, self.stem_w, self.stem_b, padding=1)
        for i in range(S):
            x = self.encoder[i](x)
            inter.encoder.append(x)
            if i < S - 1:
                x = F.conv2d(x, self.down_w[i], self.down_b[i], stride=ratios[i + 1] // ratios[i],
                             padding=1)
        for blk in self.histogram:
            x = blk(x)
        decoder: list[Tensor | None] = [None] * S
        decoder[-1] = x
        if self.freq_branch is not None:
            inter.frequency = self.freq_branch.features(image)
        for i in reversed(range(S - 1)):
            x = F.upsample_nearest(F.conv2d(x, self.up_w[i], self.up_b[i]), ratios[i + 1] // ratios[i])
            skip = inter.encoder[i]
            if self.freq_branch is not None:
                skip = mix_fuse(skip, inter.frequency[i], self.freq_branch.gates[i])
            x = self.decoder[i](x + skip)
            decoder[i] = x
        inter.decoder = decoder
        inter.feature = x
        stage1 = F.sigmoid(F.conv2d(x, self.head_w, self.head_b, padding=1))
        return stage1, inter

    def __call__(self, image: Tensor, refine: bool = True):
        return forward(self, image, refine)


def check_input(model: HistoFusionNet, image: Tensor) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise InputError(f"expected an (N, 3, H, W) image batch, got {image.shape}")
    d = model.config.divisor
    h, w = image.shape[-2:]
    if h % d or w % d:
        raise InputError(f"spatial size {(h, w)} must be divisible by {d}")


def forward(model: HistoFusionNet, image: Tensor, refine: bool = True):
    """Run the full composition.

    Returns ``(stage1, out, intermediates)``.  ``out`` is the refined image when
    the model has a refinement module and ``refine`` is true, otherwise it is
    the stage-1 tensor itself.
    """
    check_input(model, image)
    stage1, inter = model.dehaze(image)
    if refine and model.refine is not None:
        out = model.refine(inter.feature, inter.encoder, inter.decoder, stage1)
    else:
        out = stage1
    return stage1, out, inter


def build_model(config: ModelConfig | None = None) -> HistoFusionNet:
    return HistoFusionNet(config or ModelConfig())


def parameter_count(config: ModelConfig) -> int:
    return build_model(config).num_parameters()
