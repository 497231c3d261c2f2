"""Paired-image manifests: one ``hazy<TAB>clean`` relative path pair per line."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ImageIOError, ManifestError
from .imageio import load_image, save_image
from .synth import make_pairs


@dataclass
class Manifest:
    root: Path
    pairs: list[tuple[str, str]]

    def paths(self) -> list[tuple[Path, Path]]:
        return [(self.root / h, self.root / c) for h, c in self.pairs]

    def __len__(self) -> int:
        return len(self.pairs)


def read_manifest(path) -> Manifest:
    """Parse a manifest; relative paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 'hazy<TAB>clean', got {line!r}")
        pairs.append((parts[0], parts[1]))
    return Manifest(path.parent, pairs)


def write_manifest(path, pairs) -> None:
    Path(path).write_text("".join(f"{h}\t{c}\n" for h, c in pairs))


def load_pairs(manifest: Manifest) -> list[tuple[np.ndarray, np.ndarray]]:
    """Decode every pair; all problems are collected into one per-pair report."""
    out, problems = [], []
    for (hp, cp), (hrel, crel) in zip(manifest.paths(), manifest.pairs):
        try:
            hazy, clean = load_image(hp), load_image(cp)
        except ImageIOError as exc:
            problems.append(f"{hrel} | {crel}: {exc}")
            continue
        if hazy.shape != clean.shape:
            problems.append(f"{hrel} | {crel}: hazy {hazy.shape[1:]} vs clean {clean.shape[1:]}")
            continue
        out.append((hazy, clean))
    if problems:
        raise ManifestError(f"{len(problems)} invalid pair(s):\n  " + "\n  ".join(problems))
    return out


def write_synthetic_dataset(root, n_train: int, n_test: int, size: int, seed: int) -> dict:
    """Render a seeded synthetic dataset as PNGs with train.txt and test.txt manifests."""
    root = Path(root)
    samples = make_pairs(n_train + n_test, size, seed)
    splits = {"train": samples[:n_train], "test": samples[n_train:]}
    written = {}
    for split, items in splits.items():
        for sub in ("hazy", "clean"):
            (root / split / sub).mkdir(parents=True, exist_ok=True)
        pairs = []
        for i, s in enumerate(items):
            hrel, crel = f"{split}/hazy/{i:04d}.png", f"{split}/clean/{i:04d}.png"
            save_image(s.hazy, root / hrel)
            save_image(s.clean, root / crel)
            pairs.append((hrel, crel))
        write_manifest(root / f"{split}.txt", pairs)
        written[split] = root / f"{split}.txt"
    return written
