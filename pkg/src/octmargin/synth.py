"""Synthetic OCT-like phantoms with known surface geometry and tissue
classes: low-amplitude noise above the surface, a quasi-periodic bright/dark
cell texture for adipose (normal) tissue, and unstructured low-pass speckle
for tumor tissue."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preproc import BLOCK, BLOCK_FRAMES, BScanVolume, gaussian_filter
from .rng import seed_stream

AIR = 255
NORMAL_CLASS = 0
TUMOR_CLASS = 1

LAYOUTS = ("normal", "tumor", "halves")
SURFACE_PROFILES = ("flat", "tilted", "sinusoidal")


@dataclass
class PhantomConfig:
    rows: int = 256
    cols: int = 256
    frames: int = 6
    surface: str = "flat"
    surface_row: float = 60.0  # base depth of the air/tissue boundary
    tilt: float = 0.15  # rows per column, tilted profile
    amplitude: float = 10.0  # sinusoidal profile
    period: float = 256.0  # sinusoidal profile wavelength, columns
    layout: str = "normal"
    adipose_period: int = 12  # texture cell pitch, px
    adipose_contrast: float = 0.35
    tissue_base: float = 0.45
    tumor_mean: float = 0.62
    tumor_sigma: float = 0.12
    air_mean: float = 0.05
    air_sigma: float = 0.01
    speckle: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.surface not in SURFACE_PROFILES:
            raise ValueError(f"unknown surface profile {self.surface!r}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.adipose_period < 2:
            raise ValueError("texture period must be >= 2 px")
        if self.rows < BLOCK or self.cols < BLOCK or self.frames < BLOCK_FRAMES:
            raise ValueError("dims must admit at least one 64x64x3 patch")
        if self.air_sigma <= 0:
            raise ValueError("air noise level must be positive")


def surface_profile(config: PhantomConfig) -> np.ndarray:
    """True boundary row per column (float), clipped inside the frame."""
    c = np.arange(config.cols, dtype=float)
    if config.surface == "flat":
        s = np.full(config.cols, config.surface_row)
    elif config.surface == "tilted":
        s = config.surface_row + config.tilt * (c - (config.cols - 1) / 2.0)
    else:
        s = config.surface_row + config.amplitude * np.sin(2.0 * np.pi * c / config.period)
    return np.clip(s, 1.0, config.rows - 2.0)


def _adipose_texture(config: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Thresholded 2-D sinusoid grid with mild phase jitter."""
    r = np.arange(config.rows, dtype=float)[:, None]
    c = np.arange(config.cols, dtype=float)[None, :]
    jitter = gaussian_filter(rng.standard_normal((config.rows, config.cols)), 10, 5.0)
    std = jitter.std()
    if std > 0:
        jitter *= 0.35 / std
    k = 2.0 * np.pi / config.adipose_period
    grid = np.sin(k * r + jitter) * np.sin(k * c + jitter)
    return np.where(grid > 0.0, config.tissue_base + config.adipose_contrast, config.tissue_base)


def _tumor_texture(config: PhantomConfig, rng: np.random.Generator) -> np.ndarray:
    """Low-pass-filtered white noise: speckle without spatial periodicity."""
    noise = gaussian_filter(rng.standard_normal((config.rows, config.cols)), 9, 2.0)
    std = noise.std()
    if std > 0:
        noise = (noise - noise.mean()) / std
    return np.clip(config.tumor_mean + config.tumor_sigma * noise, 0.2, 0.98)


def generate(config: PhantomConfig) -> BScanVolume:
    """Deterministic phantom volume plus ground-truth mask.

    Raises when the realized tissue/air contrast falls under the 5-sigma
    detectability margin the surface detector relies on.
    """
    rng = seed_stream(config.seed, "phantom")
    rows, cols, nf = config.rows, config.cols, config.frames
    s = surface_profile(config)

    r_idx = np.arange(rows)[:, None]
    air_zone = r_idx < s[None, :]
    class_plane = np.full((rows, cols), NORMAL_CLASS, dtype=np.uint8)
    if config.layout == "tumor":
        class_plane[:] = TUMOR_CLASS
    elif config.layout == "halves":
        class_plane[:, cols // 2 :] = TUMOR_CLASS
    class_plane[air_zone] = AIR

    frames = np.empty((rows, cols, nf))
    for f in range(nf):
        adipose = _adipose_texture(config, rng)
        tumor = _tumor_texture(config, rng)
        tissue = np.where(class_plane == TUMOR_CLASS, tumor, adipose)
        tissue = tissue + config.speckle * rng.standard_normal((rows, cols))
        air = config.air_mean + config.air_sigma * rng.standard_normal((rows, cols))
        frames[:, :, f] = np.clip(np.where(air_zone, air, tissue), 0.0, None)

    mask = np.repeat(class_plane[:, :, None], nf, axis=2)
    air_vals = frames[mask == AIR]
    tissue_vals = frames[mask != AIR]
    margin = air_vals.mean() + 5.0 * air_vals.std()
    if tissue_vals.mean() < margin:
        raise ValueError(
            f"tissue mean {tissue_vals.mean():.3f} under the 5-sigma air margin {margin:.3f}"
        )
    return BScanVolume(frames=frames, mask=mask)
