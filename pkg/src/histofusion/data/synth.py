"""Procedural night scenes and a nighttime haze formation model.

The haze pipeline follows the scattering relation I = J*t + A*(1 - t) with a
spatially varying, colored airlight contributed by each artificial light, then
adds glow around bright sources, darkens with a gamma curve and adds sensor
noise.  Everything is a pure function of the clean image and the parameters.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import ParameterError, RangeError


@dataclass(frozen=True)
class Light:
    y: float            # row, in pixels
    x: float            # column, in pixels
    color: tuple[float, float, float]
    radius: float = 2.0  # extent of the visible source
    spread: float = 0.35  # airlight falloff, as a fraction of the image diagonal


@dataclass(frozen=True)
class HazeParams:
    beta: float = 1.2                      # scattering coefficient
    depth_mix: float = 0.5                 # 1 = vertical ramp only, 0 = radial ramp only
    depth_center: tuple[float, float] = (0.5, 0.5)
    ambient: tuple[float, float, float] = (0.06, 0.06, 0.09)
    lights: tuple[Light, ...] = ()
    glow_radius: float = 3.0
    glow_strength: float = 0.6
    gamma: float = 1.3
    noise_sigma: float = 0.01
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HazeSample:
    clean: np.ndarray
    hazy: np.ndarray
    params: HazeParams
    transmission: np.ndarray = field(repr=False, default=None)
    airlight: np.ndarray = field(repr=False, default=None)


def _validate(params: HazeParams) -> None:
    if params.beta < 0:
        raise ParameterError(f"beta must be >= 0, got {params.beta}")
    if params.noise_sigma < 0:
        raise ParameterError(f"noise_sigma must be >= 0, got {params.noise_sigma}")
    if params.gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {params.gamma}")
    if params.glow_radius < 0 or params.glow_strength < 0:
        raise ParameterError("glow radius and strength must be >= 0")
    if not 0 <= params.depth_mix <= 1:
        raise ParameterError(f"depth_mix must lie in [0, 1], got {params.depth_mix}")


def depth_map(h: int, w: int, params: HazeParams) -> np.ndarray:
    """Procedural depth in [0, 1]: a top-far vertical ramp mixed with a radial ramp."""
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    vertical = 1.0 - yy
    cy, cx = params.depth_center
    radial = 1.0 - np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / np.sqrt(2)
    return params.depth_mix * vertical + (1 - params.depth_mix) * radial


def airlight_map(h: int, w: int, params: HazeParams) -> np.ndarray:
    """(3, H, W) airlight: ambient term plus a Gaussian lobe of color per light."""
    a = np.empty((3, h, w))
    a[:] = np.asarray(params.ambient, dtype=np.float64)[:, None, None]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    diag = np.hypot(h, w)
    for light in params.lights:
        s = light.spread * diag
        lobe = np.exp(-((yy - light.y) ** 2 + (xx - light.x) ** 2) / (2 * s * s))
        a += np.asarray(light.color, dtype=np.float64)[:, None, None] * lobe
    return np.clip(a, 0.0, 1.0)


def source_map(h: int, w: int, lights) -> np.ndarray:
    """(3, H, W) disks of light color at each source position."""
    out = np.zeros((3, h, w))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for light in lights:
        disk = ((yy - light.y) ** 2 + (xx - light.x) ** 2) <= light.radius ** 2
        out += np.asarray(light.color, dtype=np.float64)[:, None, None] * disk
    return out


def synth_haze(clean: np.ndarray, params: HazeParams) -> HazeSample:
    """Degrade a clean (3, H, W) image in [0, 1]; deterministic in ``params``."""
    _validate(params)
    clean = np.asarray(clean, dtype=np.float32)
    if clean.ndim != 3 or clean.shape[0] != 3:
        raise ParameterError(f"clean image must be (3, H, W), got {clean.shape}")
    if clean.min() < 0 or clean.max() > 1:
        raise RangeError("clean image values must lie in [0, 1]")
    _, h, w = clean.shape
    c = clean.astype(np.float64)
    t = np.exp(-params.beta * depth_map(h, w, params))[None]
    a = airlight_map(h, w, params)
    img = c * t + a * (1.0 - t)
    if params.glow_radius > 0 and params.glow_strength > 0 and params.lights:
        src = source_map(h, w, params.lights)
        glow = np.stack([gaussian_filter(ch, sigma=params.glow_radius, mode="constant")
                         for ch in src])
        peak = glow.max()
        if peak > 0:
            img = img + params.glow_strength * glow / peak
    img = np.clip(img, 0.0, 1.0)
    if params.gamma != 1.0:
        img = img ** params.gamma
    if params.noise_sigma > 0:
        rng = np.random.default_rng(params.seed)
        img = img + params.noise_sigma * rng.standard_normal(img.shape)
    hazy = np.clip(img, 0.0, 1.0).astype(np.float32)
    return HazeSample(clean=clean, hazy=hazy, params=params,
                      transmission=t[0].astype(np.float32), airlight=a.astype(np.float32))


# ---------------------------------------------------------------------------
# procedural clean scenes
# ---------------------------------------------------------------------------

def night_scene(h: int, w: int, rng: np.random.Generator) -> tuple[np.ndarray, tuple[Light, ...]]:
    """Dark sky gradient, a skyline of lit-window buildings, a road and street lamps."""
    yy = np.linspace(0, 1, h)[:, None]
    sky_top = rng.uniform(0.02, 0.08, 3)
    sky_bot = sky_top + rng.uniform(0.05, 0.15, 3)
    img = np.empty((3, h, w))
    img[:] = (sky_top[:, None, None] * (1 - yy) + sky_bot[:, None, None] * yy)
    horizon = int(h * rng.uniform(0.6, 0.75))
    x = 0
    while x < w:
        bw = int(rng.integers(max(3, w // 10), max(4, w // 4)))
        top = int(rng.integers(h // 8, max(h // 8 + 1, horizon - 4)))
        base = rng.uniform(0.08, 0.3, 3)
        img[:, top:horizon, x:x + bw] = base[:, None, None]
        step = max(2, w // 16)
        win = rng.uniform(0.5, 1.0, 3) * np.array([1.0, 0.85, 0.55])
        for wy in range(top + 2, horizon - 2, step):
            for wx in range(x + 1, min(x + bw - 1, w - 1), step):
                if rng.random() < 0.45:
                    img[:, wy:wy + max(1, step // 2), wx:wx + max(1, step // 2)] = win[:, None, None]
        x += bw + int(rng.integers(0, max(1, w // 16)))
    road = rng.uniform(0.05, 0.15)
    img[:, horizon:, :] = road + 0.08 * (yy[horizon:] - yy[horizon])[None]
    lane = slice(max(horizon, h - h // 6), max(horizon, h - h // 6) + max(1, h // 32))
    img[:, lane, ::max(2, w // 8)] = 0.7
    lights = []
    for _ in range(int(rng.integers(2, 5))):
        color = tuple(float(v) for v in rng.uniform(0.5, 1.0, 3) * rng.choice(
            [np.array([1.0, 0.75, 0.4]), np.array([0.7, 0.85, 1.0]), np.array([1.0, 0.5, 0.3])]))
        light = Light(y=float(rng.uniform(0.2, 0.7) * h), x=float(rng.uniform(0.05, 0.95) * w),
                      color=color, radius=float(rng.uniform(1.0, 2.5) * h / 64),
                      spread=float(rng.uniform(0.2, 0.45)))
        lights.append(light)
    img += source_map(h, w, lights)
    return np.clip(img, 0.0, 1.0).astype(np.float32), tuple(lights)


def random_haze_params(rng: np.random.Generator, lights: tuple[Light, ...]) -> HazeParams:
    airlights = tuple(Light(l.y, l.x, tuple(float(c) * rng.uniform(0.4, 0.7) for c in l.color),
                            l.radius, l.spread) for l in lights)
    return HazeParams(
        beta=float(rng.uniform(0.8, 1.8)),
        depth_mix=float(rng.uniform(0.2, 0.8)),
        depth_center=(float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.2, 0.8))),
        ambient=tuple(float(v) for v in rng.uniform(0.04, 0.12, 3)),
        lights=airlights,
        glow_radius=float(rng.uniform(1.5, 4.0)),
        glow_strength=float(rng.uniform(0.3, 0.8)),
        gamma=float(rng.uniform(1.1, 1.5)),
        noise_sigma=float(rng.uniform(0.005, 0.02)),
        seed=int(rng.integers(2 ** 31)),
    )


def make_pairs(count: int, size: int | tuple[int, int], seed: int) -> list[HazeSample]:
    """``count`` reproducible (clean, hazy) samples of the given spatial size."""
    h, w = (size, size) if isinstance(size, int) else size
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        clean, lights = night_scene(h, w, rng)
        out.append(synth_haze(clean, random_haze_params(rng, lights)))
    return out
