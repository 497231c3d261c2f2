"""Command-line entry point: ``histofusion <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ModelConfig, load_config
from .core.tensor import Tensor, no_grad
from .data.imageio import load_image, save_image
from .data.manifest import load_pairs, read_manifest, write_synthetic_dataset
from .data.synth import make_pairs
from .errors import HistoFusionError, UsageError
from .network import build_model, forward
from .training.losses import psnr_metric, ssim_metric
from .training.trainer import JsonLinesLog, TrainConfig, run_stage1, run_stage2

IMAGE_SUFFIXES = (".png", ".bmp", ".ppm", ".tif", ".tiff", ".jpg", ".jpeg")
ABLATIONS = {
    "histogram": "ablation.use_histogram_blocks",
    "freqbranch": "ablation.use_frequency_branch",
    "refine": "ablation.use_refinement",
}


def _images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_synth(args) -> int:
    written = write_synthetic_dataset(args.out, args.train, args.test, args.size, args.seed)
    for split, path in written.items():
        print(f"{split}: {path}")
    return 0


def _training_data(args, cfg: TrainConfig):
    if args.data:
        train = load_pairs(read_manifest(args.data))
        val = load_pairs(read_manifest(args.val)) if args.val else None
    else:
        # default desk data: 32 train / 8 val synthetic pairs at the patch size
        train = [(s.hazy, s.clean) for s in make_pairs(32, cfg.patch, cfg.seed)]
        val = [(s.hazy, s.clean) for s in make_pairs(8, cfg.patch, 10_000 + cfg.seed)]
    return train, val


def cmd_train(args) -> int:
    if args.config:
        model_cfg, train_values = load_config(args.config)
    else:
        model_cfg, train_values = ModelConfig(), {}
    cfg = TrainConfig.from_strings(train_values, base=TrainConfig.desk())
    if args.seed is not None:
        cfg = TrainConfig.from_strings({"seed": str(args.seed)}, base=cfg)
    train, val = _training_data(args, cfg)
    model = build_model(model_cfg)
    log = JsonLinesLog(args.log) if args.log else None

    def emit(record):
        print(json.dumps(record, sort_keys=True), flush=True)
        if log is not None:
            log(record)

    if args.stage == 1:
        run_stage1(model, train, cfg, val=val, log=emit)
    else:
        if not args.init:
            raise UsageError("stage 2 requires --init pointing to a stage-1 checkpoint")
        run_stage2(model, train, cfg, args.init, val=val, log=emit)
    save_checkpoint(model, args.out)
    print(f"saved {args.out}")
    return 0


def cmd_infer(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _images(Path(args.inp))
    with no_grad():
        for path in paths:
            image = Tensor(load_image(path)[None])
            _, out, _ = forward(model, image)
            save_image(out, out_dir / (path.stem + ".png"))
    print(f"wrote {len(paths)} image(s) to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    rows = []
    for gt_path in _images(gt_dir):
        matches = [p for p in _images(pred_dir) if p.stem == gt_path.stem]
        if not matches:
            raise UsageError(f"no prediction for {gt_path.name} in {pred_dir}")
        pred, gt = load_image(matches[0]), load_image(gt_path)
        if pred.shape != gt.shape:
            raise UsageError(f"{gt_path.name}: prediction {pred.shape} vs ground truth {gt.shape}")
        rows.append((gt_path.stem, psnr_metric(pred, gt), ssim_metric(pred[None], gt[None])))
    if not rows:
        raise UsageError(f"no images in {gt_dir}")
    print(format_table(rows, args.method))
    return 0


def format_table(rows, method: str = "HistoFusionNet") -> str:
    """Per-image rows then a method summary line, PSNR to 3 decimals and SSIM to 3."""
    lines = [f"{'Image':<16}{'PSNR':>10}{'SSIM':>10}"]
    lines += [f"{name:<16}{p:>10.3f}{s:>10.3f}" for name, p, s in rows]
    psnr = float(np.mean([r[1] for r in rows]))
    ssim = float(np.mean([r[2] for r in rows]))
    lines.append("-" * 36)
    lines.append(f"{'Method':<16}{'PSNR↑':>10}{'SSIM↑':>10}")
    lines.append(f"{method:<16}{psnr:>10.3f}{ssim:>10.3f}")
    return "\n".join(lines)


def cmd_check_grads(args) -> int:
    from .gradsuite import CASES, run_suite
    names = args.only or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise UsageError(f"unknown gradient case {unknown[0]!r}; choose from {', '.join(CASES)}")
    reports = run_suite(names, seeds=tuple(range(args.seeds)), probes=args.probes)
    failed = [r for r in reports if not r.ok]
    print(f"{len(reports) - len(failed)}/{len(reports)} case runs passed")
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    if args.config:
        base, _ = load_config(args.config)
    else:
        base = ModelConfig()
    ablated = base.replace(**{ABLATIONS[args.drop]: False})
    full_params = dict(build_model(base).named_parameters())
    model = build_model(ablated)
    kept = dict(model.named_parameters())
    removed = [n for n in full_params if n not in kept]
    groups = sorted({n.split(".")[0] for n in removed})
    full_count = sum(p.size for p in full_params.values())
    print(f"drop {args.drop}: {full_count} -> {model.num_parameters()} parameters "
          f"({len(removed)} tensors removed from {', '.join(groups) or 'nothing'})")
    if args.out:
        save_checkpoint(model, args.out)
        print(f"saved {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="histofusion", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a seeded synthetic hazy/clean dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--train", type=int, default=32)
    s.add_argument("--test", type=int, default=8)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="run training stage 1 or 2")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--config", type=Path, help="key = value config file")
    s.add_argument("--data", type=Path, help="training manifest (default: synthetic desk set)")
    s.add_argument("--val", type=Path, help="validation manifest")
    s.add_argument("--init", type=Path, help="stage-1 checkpoint (stage 2 only)")
    s.add_argument("--out", type=Path, required=True, help="checkpoint to write")
    s.add_argument("--log", type=Path, help="JSON-lines epoch log")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="dehaze every image in a directory")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--in", dest="inp", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR / SSIM of predictions against ground truth")
    s.add_argument("--pred", required=True, type=Path)
    s.add_argument("--gt", required=True, type=Path)
    s.add_argument("--method", default="HistoFusionNet")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("check-grads", help="finite-difference gradient suite")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--probes", type=int, default=20)
    s.add_argument("--only", nargs="*", help="subset of case names")
    s.set_defaults(func=cmd_check_grads)

    s = sub.add_parser("ablate", help="build a model with one component removed")
    s.add_argument("--drop", required=True, choices=sorted(ABLATIONS))
    s.add_argument("--config", type=Path)
    s.add_argument("--out", type=Path, help="write the ablated model's checkpoint")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HistoFusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
