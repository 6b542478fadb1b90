"""From raw B-scan volumes to labeled 32x32x3 patches.

Surface detection runs five stages per frame: 10x10 Gaussian smoothing,
Sobel edge detection with automatic binarization, first-edge-per-column
extraction with fallback rules, ten-subset cubic-spline averaging, and
rolling-ball smoothing; the curve is then shifted 30 rows into the tissue.
Patch extraction tiles 64x64x3 blocks below the shifted surface
(non-overlapping for training, stride 8/8/1 for test) and downscales each
block to 32x32x3 by 2x2 averaging.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import CubicSpline

from .errors import ShapeError

# Acquisition geometry note: horizontal pixel pitch is 3.66x the vertical one.
PIXEL_ANISOTROPY = 3.66

UNLABELED = -1

# surface-curve provenance codes
DETECTED = 0
CARRIED = 1
HALF_DEPTH = 2

BLOCK = 64  # extraction block edge (rows and cols)
BLOCK_FRAMES = 3
PATCH = 32  # network input edge after downscaling
TRAIN_STRIDES = (64, 64, 3)
TEST_STRIDES = (8, 8, 1)  # 64-56 in rows/cols, 3-2 in frames
SURFACE_SHIFT = 30


@dataclass
class BScanVolume:
    """Stack of grayscale frames, shape (rows, cols, frames), plus an
    optional per-pixel class mask {0=normal, 1=tumor, 255=air}."""

    frames: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ShapeError("volume", f"expected 3-D (rows, cols, frames), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("volume intensities must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.uint8)
            if self.mask.shape != self.frames.shape:
                raise ShapeError("mask", "mask dims must equal frame dims")

    @property
    def shape(self):
        return self.frames.shape


@dataclass
class SurfaceCurve:
    """Per-column tissue-surface row, after the full detection pipeline.

    ``rows`` is the shifted integer curve patches are placed under;
    ``pre_shift`` keeps the smoothed curve before the 30-row shift;
    ``flags`` records per-column provenance (detected / carried-over /
    half-depth fallback).
    """

    rows: np.ndarray
    pre_shift: np.ndarray
    flags: np.ndarray
    shift: int = SURFACE_SHIFT

    def __post_init__(self):
        if not (len(self.rows) == len(self.pre_shift) == len(self.flags)):
            raise ShapeError("surface", "curve fields disagree in length")


def gaussian_kernel(size: int = 10, sigma: float = 3.0) -> np.ndarray:
    """Separable 1-D Gaussian taps with the peak on the anchor tap
    ((size-1)//2, matching the anchor convention), normalized to sum 1."""
    t = np.arange(size) - (size - 1) // 2
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter(image: np.ndarray, size: int = 10, sigma: float = 3.0) -> np.ndarray:
    """10x10 Gaussian smoothing, anchor (4,4), replicate padding."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ShapeError("gaussian", f"expected 2-D image, got {image.shape}")
    k = gaussian_kernel(size, sigma)
    before = (size - 1) // 2  # anchor offset 4 for size 10
    after = size - 1 - before
    out = image
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (before, after)
        padded = np.pad(out, pad, mode="edge")
        out = sliding_window_view(padded, size, axis=axis) @ k
    return out


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def sobel_magnitude(image: np.ndarray) -> np.ndarray:
    """Gradient magnitude from correlation with the 3x3 Sobel kernels,
    replicate padding."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ShapeError("sobel", f"expected 2-D image, got {image.shape}")
    padded = np.pad(image, 1, mode="edge")
    win = sliding_window_view(padded, (3, 3))
    gx = np.tensordot(win, SOBEL_X, axes=([2, 3], [0, 1]))
    gy = np.tensordot(win, SOBEL_Y, axes=([2, 3], [0, 1]))
    return np.hypot(gx, gy)


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximizing between-class variance of the value histogram."""
    values = np.asarray(values, dtype=float).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return hi
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(counts)
    w1 = w0[-1] - w0
    sum0 = np.cumsum(counts * centers)
    mu0 = np.divide(sum0, w0, out=np.zeros_like(sum0), where=w0 > 0)
    mu1 = np.divide(sum0[-1] - sum0, w1, out=np.zeros_like(sum0), where=w1 > 0)
    between = w0 * w1 * (mu0 - mu1) ** 2
    split = int(np.argmax(between[:-1]))  # last split leaves class 1 empty
    return float(edges[split + 1])


def sobel_edges(image: np.ndarray, min_edge_strength: float = 0.05) -> np.ndarray:
    """Binary edge map: magnitude above max(Otsu threshold, absolute floor).

    The floor keeps noise-only frames (air) from producing spurious edges,
    which is what lets the half-depth fallback fire.
    """
    mag = sobel_magnitude(image)
    thresh = max(otsu_threshold(mag), min_edge_strength)
    return mag > thresh


def first_edge_per_column(edges: np.ndarray):
    """Smallest edge row per column, with the two fallback rules.

    Columns without any edge inherit the previous column's value (flagged
    carried-over); a leading run without edges gets half the image depth
    (flagged half-depth, and carrying a half-depth value stays half-depth).
    Returns (curve float array, flags uint8 array).
    """
    edges = np.asarray(edges, dtype=bool)
    rows, cols = edges.shape
    has_edge = edges.any(axis=0)
    first = edges.argmax(axis=0)
    curve = np.empty(cols)
    flags = np.empty(cols, dtype=np.uint8)
    for c in range(cols):
        if has_edge[c]:
            curve[c] = first[c]
            flags[c] = DETECTED
        elif c == 0:
            curve[c] = rows // 2
            flags[c] = HALF_DEPTH
        else:
            curve[c] = curve[c - 1]
            flags[c] = HALF_DEPTH if flags[c - 1] == HALF_DEPTH else CARRIED
    return curve, flags


def spline_average(curve: np.ndarray) -> np.ndarray:
    """Average of ten natural cubic splines, one per column-residue class.

    Columns are split by j mod 10; each subset's (column, value) knots give
    one spline evaluated on every column, and the ten evaluations are
    averaged pointwise.
    """
    curve = np.asarray(curve, dtype=float)
    w = len(curve)
    if w < 20:
        raise ShapeError("spline_average", f"curve length {w} < 20 (each subset needs 2 knots)")
    cols = np.arange(w)
    acc = np.zeros(w)
    for j in range(10):
        spline = CubicSpline(cols[j::10], curve[j::10], bc_type="natural")
        acc += spline(cols)
    return acc / 10.0


def rolling_ball(curve: np.ndarray, radius: float = 50.0) -> np.ndarray:
    """Morphological closing of the curve from below with a disc of the
    given radius (columns x rows, treated isotropically).

    The ball rolls on the tissue side (larger row indices); the envelope
    removes air-ward spikes narrower than the ball and never moves the
    curve toward the air (output rows >= input rows).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    y = np.asarray(curve, dtype=float)
    w = len(y)
    r = int(np.floor(radius))
    offsets = np.arange(-r, r + 1)
    b = np.sqrt(radius * radius - offsets.astype(float) ** 2)
    dil = np.full(w, -np.inf)
    for t, bt in zip(offsets, b):
        lo, hi = max(0, -t), min(w, w - t)
        np.maximum(dil[lo:hi], y[lo + t : hi + t] + bt, out=dil[lo:hi])
    ero = np.full(w, np.inf)
    for t, bt in zip(offsets, b):
        lo, hi = max(0, -t), min(w, w - t)
        np.minimum(ero[lo:hi], dil[lo + t : hi + t] - bt, out=ero[lo:hi])
    return ero


def detect_surface(
    frame: np.ndarray,
    shift: int = SURFACE_SHIFT,
    ball_radius: float = 50.0,
    min_edge_strength: float = 0.05,
) -> SurfaceCurve:
    """Full surface pipeline on one frame, then the shift into the tissue.

    The smoothed curve is shifted before rounding; both forms are clamped
    to the frame's row range.
    """
    frame = np.asarray(frame, dtype=float)
    rows = frame.shape[0]
    smoothed = gaussian_filter(frame)
    edges = sobel_edges(smoothed, min_edge_strength)
    raw, flags = first_edge_per_column(edges)
    pre = rolling_ball(spline_average(raw), ball_radius)
    pre = np.clip(pre, 0, rows - 1)
    shifted = np.clip(pre + shift, 0, rows - 1)
    return SurfaceCurve(
        rows=np.rint(shifted).astype(int), pre_shift=pre, flags=flags, shift=shift
    )


@dataclass
class PatchSet:
    """Extracted patches (n, 32, 32, 3) with labels {1=tumor, 0=normal,
    -1=unlabeled} and block origins (row, col, frame) in the source volume."""

    patches: np.ndarray
    labels: np.ndarray
    origins: np.ndarray

    def __len__(self):
        return len(self.patches)


def downscale(block: np.ndarray) -> np.ndarray:
    """64x64x3 -> 32x32x3 by averaging each 2x2 cell per frame."""
    block = np.asarray(block, dtype=float)
    if block.shape != (BLOCK, BLOCK, BLOCK_FRAMES):
        raise ShapeError("downscale", f"expected {(BLOCK, BLOCK, BLOCK_FRAMES)}, got {block.shape}")
    return block.reshape(PATCH, 2, PATCH, 2, BLOCK_FRAMES).mean(axis=(1, 3))


def _window_max(values: np.ndarray, width: int) -> np.ndarray:
    """Max over each length-``width`` window; index c0 covers cols c0..c0+width-1."""
    return sliding_window_view(values, width).max(axis=1)


def extract_patches(
    volume: BScanVolume,
    surfaces: list,
    mode: str,
    label: int = UNLABELED,
) -> PatchSet:
    """Tile 64x64x3 blocks below the shifted surface and downscale each.

    Train mode uses non-overlapping strides (64, 64, 3); test mode strides
    (8, 8, 1).  A block is kept only when its top row is at or below the
    shifted surface at every covered column of all three frames.  Labels
    come from the ground-truth mask majority when the volume has one, else
    from ``label``.  Intensities are min-max normalized to [0,1] at volume
    level before downscaling.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    rows, cols, nframes = volume.shape
    if nframes < BLOCK_FRAMES:
        raise ShapeError("volume", f"needs >= {BLOCK_FRAMES} frames, got {nframes}")
    if len(surfaces) != nframes:
        raise ShapeError("surface", f"expected {nframes} surface curves, got {len(surfaces)}")
    sr, sc, sf = TRAIN_STRIDES if mode == "train" else TEST_STRIDES

    lo, hi = float(volume.frames.min()), float(volume.frames.max())
    norm = (volume.frames - lo) / (hi - lo) if hi > lo else np.zeros_like(volume.frames)

    if cols >= BLOCK:
        col_max = np.stack([_window_max(s.rows, BLOCK) for s in surfaces])  # (frames, c0)
    patches, labels, origins = [], [], []
    for f0 in range(0, nframes - BLOCK_FRAMES + 1, sf):
        for r0 in range(0, rows - BLOCK + 1, sr):
            for c0 in range(0, cols - BLOCK + 1, sc):
                if r0 < col_max[f0 : f0 + BLOCK_FRAMES, c0].max():
                    continue
                block = norm[r0 : r0 + BLOCK, c0 : c0 + BLOCK, f0 : f0 + BLOCK_FRAMES]
                if volume.mask is not None:
                    sub = volume.mask[r0 : r0 + BLOCK, c0 : c0 + BLOCK, f0 : f0 + BLOCK_FRAMES]
                    tumor = int(np.sum(sub == 1))
                    normal = int(np.sum(sub == 0))
                    lab = 1 if tumor > normal else 0
                else:
                    lab = label
                patches.append(downscale(block))
                labels.append(lab)
                origins.append((r0, c0, f0))
    n = len(patches)
    return PatchSet(
        patches=np.array(patches).reshape(n, PATCH, PATCH, BLOCK_FRAMES),
        labels=np.array(labels, dtype=int),
        origins=np.array(origins, dtype=int).reshape(n, 3),
    )
