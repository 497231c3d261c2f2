"""Two-stage training: the dehazing network first, then refinement fine-tuning."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..checkpoint import load_state, read_checkpoint
from ..core import functional as F
from ..core.tensor import Tape, Tensor, backward, no_grad
from ..data.augment import crop_rotate_augment
from ..errors import ConfigurationError, UsageError
from ..network import HistoFusionNet, forward
from .losses import (COMPONENTS, FeatureExtractor, LossWeights, PatchDiscriminator,
                     default_extractor, discriminator_loss, loss_terms, psnr_metric,
                     ssim_metric, weighted_sum)
from .optim import Adam, AdamState, lr_at, stage_epochs

Pair = tuple[np.ndarray, np.ndarray]

# parameters held fixed in stage 2 unless freezing is disabled
STAGE2_FROZEN = ("stem_", "encoder.", "down_", "histogram.", "freq_branch.")


@dataclass
class TrainConfig:
    schedule_scale: float = 1.0
    stage1_epochs: int | None = None   # None -> 5000 * schedule_scale
    stage2_epochs: int | None = None   # None -> 200 * schedule_scale
    batch_size: int = 4
    patch: int = 384
    seed: int = 0
    freeze_encoder: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    eval_every: int = 1

    def epochs(self, stage: int) -> int:
        override = self.stage1_epochs if stage == 1 else self.stage2_epochs
        return override if override is not None else stage_epochs(stage, self.schedule_scale)

    @classmethod
    def desk(cls, seed: int = 0) -> "TrainConfig":
        """200 / 20 epochs at 64x64 patches, validation every 10 epochs."""
        return cls(schedule_scale=0.04, stage2_epochs=20, patch=64, seed=seed, eval_every=10)

    @classmethod
    def from_strings(cls, values: dict[str, str], base: "TrainConfig | None" = None):
        """Build from ``train.*`` entries of a config file (values still text)."""
        cfg = base or cls()
        kinds = {"schedule_scale": float, "stage1_epochs": int, "stage2_epochs": int,
                 "batch_size": int, "patch": int, "seed": int, "freeze_encoder": _bool,
                 "eval_every": int}
        changes, weights = {}, {}
        for key, text in values.items():
            if key.startswith("weights."):
                weights[key[len("weights."):]] = float(text)
            elif key in kinds:
                try:
                    changes[key] = kinds[key](text)
                except ValueError as exc:
                    raise ConfigurationError(f"train.{key}: {exc}") from exc
            else:
                raise ConfigurationError(f"unknown training key train.{key}")
        if weights:
            try:
                changes["weights"] = dataclasses.replace(cfg.weights, **weights)
            except TypeError as exc:
                raise ConfigurationError(f"train.weights: {exc}") from exc
        return dataclasses.replace(cfg, **changes)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class TrainState:
    stage: int
    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    optimizer: AdamState = field(default_factory=AdamState)
    disc_optimizer: AdamState = field(default_factory=AdamState)
    rng_state: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)


def _batches(data: Sequence[Pair], batch_size: int, patch: int, rng: np.random.Generator):
    order = rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        items = [crop_rotate_augment(data[i], patch, rng) for i in order[start:start + batch_size]]
        yield (Tensor(np.stack([h for h, _ in items])), Tensor(np.stack([c for _, c in items])))


def evaluate(model: HistoFusionNet, data: Sequence[Pair], refine: bool = True,
             batch_size: int = 4) -> dict[str, float]:
    """Mean PSNR / SSIM of the model output against clean targets."""
    psnrs, ssims, sizes = [], [], []
    with no_grad():
        for start in range(0, len(data), batch_size):
            chunk = data[start:start + batch_size]
            hazy = Tensor(np.stack([h for h, _ in chunk]))
            clean = Tensor(np.stack([c for _, c in chunk]))
            _, out, _ = forward(model, hazy, refine=refine)
            psnrs.append(psnr_metric(out, clean))
            ssims.append(ssim_metric(out, clean))
            sizes.append(len(chunk))
    w = np.asarray(sizes, dtype=np.float64)
    return {"psnr": float(np.dot(psnrs, w) / w.sum()), "ssim": float(np.dot(ssims, w) / w.sum())}


def trainable_parameters(model: HistoFusionNet, stage: int,
                         freeze_encoder: bool = True) -> list[tuple[str, Tensor]]:
    named = list(model.named_parameters())
    if stage == 1:
        # the refinement module is excluded from the first stage
        return [(n, p) for n, p in named if not n.startswith("refine.")]
    if not freeze_encoder:
        return named
    return [(n, p) for n, p in named if not n.startswith(STAGE2_FROZEN)]


def _run(model: HistoFusionNet, data: Sequence[Pair], cfg: TrainConfig, stage: int,
         val: Sequence[Pair] | None, log: Callable[[dict], None] | None,
         discriminator: PatchDiscriminator | None,
         extractor: FeatureExtractor | None) -> TrainState:
    if not data:
        raise UsageError("training needs at least one (hazy, clean) pair")
    rng = np.random.default_rng([cfg.seed, stage])
    refine = stage == 2
    named = trainable_parameters(model, stage, cfg.freeze_encoder)
    opt = Adam(named)
    disc = discriminator or PatchDiscriminator(seed=cfg.seed)
    disc_opt = Adam(list(disc.named_parameters()))
    extractor = extractor or default_extractor()
    state = TrainState(stage=stage, optimizer=opt.state, disc_optimizer=disc_opt.state)
    val = val if val is not None else data

    for epoch in range(cfg.epochs(stage)):
        lr = lr_at(epoch, stage, cfg.schedule_scale)
        sums = dict.fromkeys(COMPONENTS + ("total",), 0.0)
        batches = 0
        for hazy, clean in _batches(data, cfg.batch_size, cfg.patch, rng):
            model.zero_grad()
            disc.zero_grad()
            with Tape() as tape:
                _, out, _ = forward(model, hazy, refine=refine)
                terms = loss_terms(out, clean, disc, extractor)
                total = weighted_sum(terms, cfg.weights)
                backward(tape, total)
            tape.clear()
            opt.step(lr)
            fake = out.detach()
            disc.zero_grad()
            with Tape() as tape:
                backward(tape, discriminator_loss(clean, fake, disc))
            tape.clear()
            disc_opt.step(lr)
            for k, v in terms.items():
                sums[k] += v.item()
            sums["total"] += total.item()
            batches += 1
            state.step += 1
        record = {"epoch": epoch + 1, "stage": stage, "lr": lr}
        record.update({f"loss_{k}": sums[k] / batches for k in COMPONENTS})
        record["total"] = sums["total"] / batches
        if cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs(stage)):
            record.update(evaluate(model, val, refine=refine, batch_size=cfg.batch_size))
        else:
            record.update({"psnr": None, "ssim": None})
        state.epoch, state.lr = epoch + 1, lr
        state.history.append(record)
        if log is not None:
            log(record)
    model.zero_grad()
    state.rng_state = rng.bit_generator.state
    return state


def run_stage1(model: HistoFusionNet, data: Sequence[Pair], cfg: TrainConfig,
               val: Sequence[Pair] | None = None, log: Callable[[dict], None] | None = None,
               discriminator: PatchDiscriminator | None = None,
               extractor: FeatureExtractor | None = None) -> TrainState:
    """Train the dehazing network alone (refinement bypassed)."""
    return _run(model, data, cfg, 1, val, log, discriminator, extractor)


def run_stage2(model: HistoFusionNet, data: Sequence[Pair], cfg: TrainConfig,
               checkpoint, val: Sequence[Pair] | None = None,
               log: Callable[[dict], None] | None = None,
               discriminator: PatchDiscriminator | None = None,
               extractor: FeatureExtractor | None = None) -> TrainState:
    """Load stage-1 weights from ``checkpoint`` and fine-tune with refinement."""
    if model.refine is None:
        raise UsageError("stage 2 needs a model with the refinement module enabled")
    if checkpoint is None or not Path(checkpoint).is_file():
        raise UsageError(f"stage 2 requires a stage-1 checkpoint; {checkpoint} not found")
    _, tensors = read_checkpoint(checkpoint)
    load_state(model, tensors, strict=False, source=str(checkpoint))
    return _run(model, data, cfg, 2, val, log, discriminator, extractor)


class JsonLinesLog:
    """Append one JSON object per epoch to a file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("")

    def __call__(self, record: dict) -> None:
        with self.path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
