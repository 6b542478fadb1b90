"""Dense slice classification: per-pixel averaging of patch predictions,
red/green rendering with depth masking, and the four-level region score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .preproc import BLOCK, SurfaceCurve

DEPTH_LIMIT = 384  # rows below the detected surface that remain diagnostic
MIN_REGION_PIXELS = 300
SCORE_LEVELS = (1.0, 0.75, 0.5, 0.0)


@dataclass
class PredictionField:
    """Per-pixel mean of hard patch predictions plus coverage and validity."""

    mean: np.ndarray  # (rows, cols) float in [0,1]; 0 where uncovered
    count: np.ndarray  # contributing patches per pixel
    valid: np.ndarray  # covered, at or below surface, within the depth window


def accumulate(
    shape: tuple,
    origins: np.ndarray,
    predictions: np.ndarray,
    surface: SurfaceCurve,
    depth_limit: int = DEPTH_LIMIT,
) -> PredictionField:
    """Average hard {0,1} predictions of 64x64 patch footprints per pixel.

    ``origins`` holds each patch's top-left (row, col) on the slice.  A
    pixel is valid when covered by at least one patch, at or below the
    shifted surface of its column, and less than ``depth_limit`` rows
    beneath it.
    """
    rows, cols = shape
    origins = np.asarray(origins, dtype=int)
    predictions = np.asarray(predictions)
    if origins.ndim != 2 or origins.shape[1] != 2 or len(origins) != len(predictions):
        raise ValueError("origins must be (n, 2) row/col pairs matching predictions")
    if not np.all((predictions == 0) | (predictions == 1)):
        raise ValueError("predictions must be hard classes in {0, 1}")
    if len(surface.rows) != cols:
        raise ValueError("surface length must equal the slice width")
    total = np.zeros(shape)
    count = np.zeros(shape, dtype=int)
    for (r0, c0), p in zip(origins, predictions):
        if r0 < 0 or c0 < 0 or r0 + BLOCK > rows or c0 + BLOCK > cols:
            raise ValueError(f"patch origin ({r0}, {c0}) out of bounds for {shape}")
        total[r0 : r0 + BLOCK, c0 : c0 + BLOCK] += p
        count[r0 : r0 + BLOCK, c0 : c0 + BLOCK] += 1
    mean = np.divide(total, count, out=np.zeros(shape), where=count > 0)
    r = np.arange(rows)[:, None]
    depth = r - surface.rows[None, :]
    valid = (count > 0) & (depth >= 0) & (depth < depth_limit)
    return PredictionField(mean=mean, count=count, valid=valid)


def render(field: PredictionField) -> np.ndarray:
    """8-bit RGB overlay: red = prediction, green = 1 - prediction, blue 0;
    invalid pixels are black.  Valid pixels always satisfy R + G = 255."""
    red = np.rint(255.0 * field.mean).astype(np.uint8)
    img = np.zeros(field.mean.shape + (3,), dtype=np.uint8)
    img[..., 0] = np.where(field.valid, red, 0)
    img[..., 1] = np.where(field.valid, 255 - red, 0)
    return img


def subjective_score(
    field: PredictionField, region: np.ndarray, min_pixels: int = MIN_REGION_PIXELS
) -> Optional[float]:
    """Four-level alert score of one region from its red-value histogram.

    Pixels split into [0.75, 1], [0.5, 0.75), [0.25, 0.5), [0, 0.25); the
    score is 1 / 0.75 / 0.5 when the first one / two / three bins together
    reach ``min_pixels`` pixels, else 0.  Empty regions score None.
    """
    region = np.asarray(region, dtype=bool)
    if region.shape != field.mean.shape:
        raise ValueError("region mask dims must match the field")
    sel = region & field.valid
    if not sel.any():
        return None
    p = field.mean[sel]
    c1 = int(np.sum(p >= 0.75))
    c2 = int(np.sum((p >= 0.5) & (p < 0.75)))
    c3 = int(np.sum((p >= 0.25) & (p < 0.5)))
    if c1 >= min_pixels:
        return 1.0
    if c1 + c2 >= min_pixels:
        return 0.75
    if c1 + c2 + c3 >= min_pixels:
        return 0.5
    return 0.0


@dataclass
class RegionScore:
    polarity: str  # "cancer" | "normal"
    scores: list  # per-region scores, region labels ascending
    mean: Optional[float]


def score_regions(
    field: PredictionField,
    class_mask: np.ndarray,
    polarity: str,
    min_pixels: int = MIN_REGION_PIXELS,
) -> RegionScore:
    """Score every 8-connected component of a class mask.

    ``class_mask`` marks the pixels of one tissue class (ground truth);
    cancer regions want high scores, normal regions low ones.  Regions whose
    valid part is empty are skipped.
    """
    if polarity not in ("cancer", "normal"):
        raise ValueError("polarity must be 'cancer' or 'normal'")
    labels, nreg = ndimage.label(np.asarray(class_mask, dtype=bool), structure=np.ones((3, 3)))
    scores = []
    for ri in range(1, nreg + 1):
        s = subjective_score(field, labels == ri, min_pixels)
        if s is not None:
            scores.append(s)
    mean = float(np.mean(scores)) if scores else None
    return RegionScore(polarity=polarity, scores=scores, mean=mean)
