"""Model configuration and its flat ``key = value`` text form."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError


@dataclass(frozen=True)
class ScaleConfig:
    ratio: int
    width: int
    blocks: int


@dataclass(frozen=True)
class BottleneckConfig:
    blocks: int = 2
    bins: int = 4
    heads: int = 1


@dataclass(frozen=True)
class DeformConfig:
    groups: int = 4
    points: int = 9


@dataclass(frozen=True)
class RefineConfig:
    sharpness: float = 20.0
    per_channel_mask: bool = False


@dataclass(frozen=True)
class AblationConfig:
    use_histogram_blocks: bool = True
    use_frequency_branch: bool = True
    use_refinement: bool = True


DESK_SCALES = (ScaleConfig(1, 16, 2), ScaleConfig(2, 32, 2), ScaleConfig(4, 64, 2))


@dataclass(frozen=True)
class ModelConfig:
    """Complete network description.

    ``scales`` lists (downsample ratio, width, DCNFormer block count) from the
    full-resolution stage to the bottleneck.  The bottleneck stage's blocks run
    once; every other scale runs its block count in both encoder and decoder.
    """

    scales: tuple[ScaleConfig, ...] = DESK_SCALES
    bottleneck: BottleneckConfig = field(default_factory=BottleneckConfig)
    deform: DeformConfig = field(default_factory=DeformConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    ffn_ratio: int = 2
    seed: int = 0

    @property
    def ratios(self) -> list[int]:
        return [s.ratio for s in self.scales]

    @property
    def widths(self) -> list[int]:
        return [s.width for s in self.scales]

    @property
    def divisor(self) -> int:
        return self.scales[-1].ratio

    def replace(self, **changes) -> "ModelConfig":
        """Copy with top-level or dotted (``ablation.use_refinement``) fields changed."""
        cfg = self
        for key, value in changes.items():
            cfg = _set_path(cfg, key.replace("__", ".").split("."), value)
        return cfg

    def validate(self) -> "ModelConfig":
        if not self.scales:
            raise ConfigurationError("scales: at least one scale is required")
        if self.deform.groups < 1:
            raise ConfigurationError(f"deform.groups: {self.deform.groups} < 1")
        if self.deform.points < 1:
            raise ConfigurationError(f"deform.points: {self.deform.points} < 1")
        prev = 0
        for i, s in enumerate(self.scales):
            if s.ratio < 1 or s.ratio & (s.ratio - 1):
                raise ConfigurationError(f"scales[{i}].ratio: {s.ratio} is not a power of two")
            if i == 0 and s.ratio != 1:
                raise ConfigurationError(f"scales[0].ratio: must be 1, got {s.ratio}")
            if s.ratio <= prev:
                raise ConfigurationError(f"scales[{i}].ratio: {s.ratio} not strictly increasing")
            prev = s.ratio
            if s.width <= 0 or s.width % self.deform.groups:
                raise ConfigurationError(
                    f"scales[{i}].width: {s.width} not a positive multiple of "
                    f"deform.groups={self.deform.groups}")
            if s.blocks < 0:
                raise ConfigurationError(f"scales[{i}].blocks: negative count {s.blocks}")
        if self.bottleneck.blocks < 0:
            raise ConfigurationError(f"bottleneck.blocks: negative count {self.bottleneck.blocks}")
        if self.bottleneck.bins < 1:
            raise ConfigurationError(f"bottleneck.bins: {self.bottleneck.bins} < 1")
        if self.bottleneck.heads < 1 or self.scales[-1].width % self.bottleneck.heads:
            raise ConfigurationError(
                f"bottleneck.heads: {self.bottleneck.heads} does not divide "
                f"bottleneck width {self.scales[-1].width}")
        if self.ffn_ratio < 1:
            raise ConfigurationError(f"ffn_ratio: {self.ffn_ratio} < 1")
        if self.refine.sharpness <= 0:
            raise ConfigurationError(f"refine.sharpness: {self.refine.sharpness} <= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                scales=tuple(ScaleConfig(**s) for s in d["scales"]),
                bottleneck=BottleneckConfig(**d["bottleneck"]),
                deform=DeformConfig(**d["deform"]),
                refine=RefineConfig(**d["refine"]),
                ablation=AblationConfig(**d["ablation"]),
                ffn_ratio=int(d["ffn_ratio"]),
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed config mapping: {exc}") from exc


def _set_path(obj, path: list[str], value):
    head, rest = path[0], path[1:]
    if not dataclasses.is_dataclass(obj) or head not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigurationError(f"unknown config key {'.'.join(path)!r}")
    if rest:
        value = _set_path(getattr(obj, head), rest, value)
    return dataclasses.replace(obj, **{head: value})


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def format_scales(scales) -> str:
    return ", ".join(f"{s.ratio}:{s.width}:{s.blocks}" for s in scales)


def parse_scales(text: str) -> tuple[ScaleConfig, ...]:
    out = []
    for item in text.split(","):
        parts = item.strip().split(":")
        if len(parts) != 3:
            raise ConfigurationError(f"scales entry {item.strip()!r} is not ratio:width:blocks")
        out.append(ScaleConfig(*(int(p) for p in parts)))
    return tuple(out)


def _leaf_types(cfg) -> dict[str, type]:
    types = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "scales":
            types["scales"] = str
        elif dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                types[f"{f.name}.{g.name}"] = type(getattr(value, g.name))
        else:
            types[f.name] = type(value)
    return types


def parse_config_text(text: str, base: ModelConfig | None = None):
    """Parse ``key = value`` lines.

    Keys are ModelConfig field paths; keys under ``train.`` are returned
    separately as raw strings for the trainer.  Returns (ModelConfig, train_dict).
    """
    cfg = base or ModelConfig()
    types = _leaf_types(cfg)
    train: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.startswith("train."):
            train[key[len("train."):]] = value
            continue
        if key not in types:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        try:
            parsed = parse_scales(value) if key == "scales" else _parse_scalar(value, types[key])
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from exc
        cfg = _set_path(cfg, key.split("."), parsed)
    return cfg.validate(), train


def format_config(cfg: ModelConfig) -> str:
    lines = [f"scales = {format_scales(cfg.scales)}"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "scales":
            continue
        if dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                v = getattr(value, g.name)
                lines.append(f"{f.name}.{g.name} = {str(v).lower() if isinstance(v, bool) else v}")
        else:
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path) -> tuple[ModelConfig, dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)
