"""The scaled two-stage training experiment on synthetic data.

One run: 32 training and 8 validation synthetic pairs at 64x64, stage 1 for
200 epochs, a stage-1 checkpoint, then stage 2 for 20 epochs with refinement.
"""
from __future__ import annotations

import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ModelConfig
from .data.synth import make_pairs
from .network import build_model
from .training.losses import psnr_metric
from .training.trainer import JsonLinesLog, TrainConfig, evaluate, run_stage1, run_stage2

TRAIN_PAIRS = 32
VAL_PAIRS = 8
SIZE = 64
VAL_SEED_OFFSET = 10_000


@dataclass
class DeskResult:
    seed: int
    first_total: float
    last_total: float
    hazy_psnr: float
    out_psnr: float
    stage1_psnr: float
    seconds: float

    @property
    def loss_drop(self) -> float:
        return 1.0 - self.last_total / self.first_total

    @property
    def psnr_gain(self) -> float:
        return self.out_psnr - self.hazy_psnr

    def passed(self, min_drop: float = 0.5, min_gain: float = 2.0) -> bool:
        return self.loss_drop >= min_drop and self.psnr_gain >= min_gain


def desk_data(seed: int):
    train = [(s.hazy, s.clean) for s in make_pairs(TRAIN_PAIRS, SIZE, seed)]
    val = [(s.hazy, s.clean) for s in make_pairs(VAL_PAIRS, SIZE, VAL_SEED_OFFSET + seed)]
    return train, val


def desk_run(seed: int, workdir=None, train_cfg: TrainConfig | None = None,
             model_cfg: ModelConfig | None = None) -> DeskResult:
    """Run both stages for one seed.

    The loss-drop figure compares the stage-1 epoch-1 mean total loss with the
    final stage-2 epoch; PSNR is measured on the validation pairs.
    """
    start = time.perf_counter()
    cfg = train_cfg or TrainConfig.desk(seed)
    model = build_model((model_cfg or ModelConfig()).replace(seed=seed))
    train, val = desk_data(seed)
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(workdir) if workdir is not None else Path(tmp)
        work.mkdir(parents=True, exist_ok=True)
        log1 = JsonLinesLog(work / f"seed{seed}_stage1.jsonl")
        s1 = run_stage1(model, train, cfg, val=val, log=log1)
        ckpt = work / f"seed{seed}_stage1.ckpt"
        save_checkpoint(model, ckpt)
        stage1_psnr = evaluate(model, val, refine=False)["psnr"]
        log2 = JsonLinesLog(work / f"seed{seed}_stage2.jsonl")
        s2 = run_stage2(model, train, cfg, ckpt, val=val, log=log2)
        save_checkpoint(model, work / f"seed{seed}_stage2.ckpt")
    out_psnr = evaluate(model, val, refine=True)["psnr"]
    hazy_psnr = float(np.mean([psnr_metric(h, c) for h, c in val]))
    return DeskResult(seed=seed, first_total=s1.history[0]["total"],
                      last_total=s2.history[-1]["total"], hazy_psnr=hazy_psnr,
                      out_psnr=out_psnr, stage1_psnr=stage1_psnr,
                      seconds=time.perf_counter() - start)


def desk_experiment(seeds=(0, 1, 2, 3, 4), workers: int | None = None,
                    workdir=None) -> list[DeskResult]:
    """Run seeds in parallel worker processes (one per seed, up to ``workers``)."""
    import os
    workers = workers or min(len(seeds), os.cpu_count() or 1)
    if workers <= 1:
        return [desk_run(s, workdir) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(desk_run, seeds, [workdir] * len(seeds)))


def as_dict(result: DeskResult) -> dict:
    d = asdict(result)
    d.update(loss_drop=result.loss_drop, psnr_gain=result.psnr_gain, passed=result.passed())
    return d
