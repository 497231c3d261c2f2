"""
Training on synthetic night haze
================================

Renders a few synthetic night scenes, degrades them with haze, glow, low
light and noise, then trains both stages briefly and compares PSNR before and
after. The full desk schedule is 200 + 20 epochs; the defaults here take a few
minutes.

    python demos/short_training.py --epochs 30 --out demo_out
"""
import argparse
from pathlib import Path

import numpy as np

from histofusion.checkpoint import save_checkpoint
from histofusion.config import ModelConfig
from histofusion.core.tensor import Tensor, no_grad
from histofusion.data import make_pairs, save_image
from histofusion.network import build_model
from histofusion.training.losses import psnr_metric
from histofusion.training.trainer import TrainConfig, evaluate, run_stage1, run_stage2

parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
parser.add_argument("--epochs", type=int, default=30, help="stage-1 epochs")
parser.add_argument("--stage2-epochs", type=int, default=5)
parser.add_argument("--size", type=int, default=32)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", type=Path, default=Path("demo_out"))
args = parser.parse_args()
args.out.mkdir(parents=True, exist_ok=True)

# Data: 16 training and 4 validation pairs
train = [(s.hazy, s.clean) for s in make_pairs(16, args.size, args.seed)]
val = [(s.hazy, s.clean) for s in make_pairs(4, args.size, 10_000 + args.seed)]
print(f"hazy input PSNR on validation: {np.mean([psnr_metric(h, c) for h, c in val]):.2f} dB")

# Stage 1 trains the dehazing network with the refinement module bypassed
model = build_model(ModelConfig(seed=args.seed))
cfg = TrainConfig(schedule_scale=args.epochs / 5000, stage1_epochs=args.epochs,
                  stage2_epochs=args.stage2_epochs, patch=args.size, seed=args.seed,
                  eval_every=max(1, args.epochs // 5))


def show(record):
    if record["psnr"] is not None:
        print(f"stage {record['stage']} epoch {record['epoch']:4d}  lr {record['lr']:.2e}  "
              f"loss {record['total']:.4f}  val PSNR {record['psnr']:.2f} dB")


run_stage1(model, train, cfg, val=val, log=show)
ckpt = args.out / "stage1.ckpt"
save_checkpoint(model, ckpt)

# Stage 2 fine-tunes refinement and decoder from the stage-1 checkpoint
run_stage2(model, train, cfg, ckpt, val=val, log=show)
save_checkpoint(model, args.out / "stage2.ckpt")
print(f"final validation PSNR: {evaluate(model, val)['psnr']:.2f} dB")

hazy, clean = val[0]
with no_grad():
    _, out, _ = model(Tensor(hazy[None]))
for name, img in (("hazy", hazy), ("output", out.data[0]), ("clean", clean)):
    save_image(img, args.out / f"val0_{name}.png")
print(f"wrote {args.out}/val0_{{hazy,output,clean}}.png")
