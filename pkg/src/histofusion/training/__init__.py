"""Composite loss, metrics, Adam, schedule and the two-stage trainer."""
from .losses import (FeatureExtractor, LossWeights, PatchDiscriminator, adversarial_loss,
                     discriminator_loss, l1_loss, perceptual_loss, psnr_metric, ssim,
                     ssim_loss, ssim_metric, total_loss)
from .optim import Adam, AdamState, adam_step, lr_at, stage_epochs
from .trainer import (JsonLinesLog, TrainConfig, TrainState, evaluate, run_stage1, run_stage2,
                      trainable_parameters)

__all__ = [
    "Adam", "AdamState", "FeatureExtractor", "JsonLinesLog", "LossWeights", "PatchDiscriminator",
    "TrainConfig", "TrainState", "adam_step", "adversarial_loss", "discriminator_loss",
    "evaluate", "l1_loss", "lr_at", "perceptual_loss", "psnr_metric", "run_stage1",
    "run_stage2", "ssim", "ssim_loss", "ssim_metric", "stage_epochs", "total_loss",
    "trainable_parameters",
]
