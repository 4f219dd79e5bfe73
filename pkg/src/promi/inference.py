"""Query-time prediction: cosine logits, bilinear upsampling, argmax mask.

The logit map holds one channel per prototype (channel 0 = foreground).
Upsampling uses the half-pixel-centers convention: output pixel (x, y)
samples source coordinate ((x+0.5)*Gw/out_w - 0.5, (y+0.5)*Gh/out_h - 0.5),
clamped to the source grid. Logits are interpolated first and the argmax
taken at pixel resolution; ties go to the lowest channel, consistent with
support-time assignment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .feature_store import NormalizedFeatureMap
from .prototypes import PrototypeSet

LOGIT_BOUND_ATOL = 1e-6


@dataclass(frozen=True)
class LogitMap:
    """(grid_h, grid_w, channels) similarity scores, each in [-1, 1]."""

    grid_h: int
    grid_w: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.grid_h, self.grid_w, self.channels):
            raise ShapeError(
                f"logit shape {self.data.shape} != "
                f"({self.grid_h}, {self.grid_w}, {self.channels})")
        if self.channels < 1:
            raise ShapeError("logit map needs at least one channel")
        if np.abs(self.data).max() > 1.0 + LOGIT_BOUND_ATOL:
            raise ShapeError("logit values must lie in [-1, 1]")
        self.data.setflags(write=False)


@dataclass(frozen=True)
class SegmentationMask:
    """Binary foreground mask at image resolution."""

    height: int
    width: int
    data: np.ndarray  # (height, width) uint8 in {0, 1}

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise ShapeError(
                f"mask shape {self.data.shape} != ({self.height}, {self.width})")
        if not np.isin(self.data, (0, 1)).all():
            raise ShapeError("mask values must be 0 or 1")
        self.data.setflags(write=False)


def compute_logits(query: NormalizedFeatureMap,
                   protos: PrototypeSet) -> LogitMap:
    """Dot product of every patch vector with every prototype.

    Both sides are unit length, so the scores are cosine similarities.
    """
    if query.depth != protos.depth:
        raise ShapeError(
            f"query depth {query.depth} != prototype depth {protos.depth}")
    scores = np.einsum("hwd,kd->hwk", query.data.astype(np.float64),
                       protos.stacked())
    # Unit-vector dot products can exceed 1 by float epsilon only.
    return LogitMap(grid_h=query.grid_h, grid_w=query.grid_w,
                    channels=protos.num_bg + 1, data=scores)


def _sample_axis(in_size: int, out_size: int):
    """Half-pixel source coordinates for one axis: floor index, neighbor
    index, and interpolation weight, all edge-clamped."""
    coords = (np.arange(out_size, dtype=np.float64) + 0.5) * in_size / out_size - 0.5
    coords = np.clip(coords, 0.0, in_size - 1.0)
    lo = np.floor(coords).astype(np.int64)
    lo = np.minimum(lo, in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = coords - lo
    return lo, hi, frac


def upsample_bilinear(logits: LogitMap, out_h: int, out_w: int) -> LogitMap:
    """Channel-wise bilinear resize to (out_h, out_w).

    Output values never leave the [min, max] range of their input channel
    (convex combination of four neighbors).
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dims must be >= 1, got {out_h}x{out_w}")
    y0, y1, fy = _sample_axis(logits.grid_h, out_h)
    x0, x1, fx = _sample_axis(logits.grid_w, out_w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    r0 = logits.data[y0]
    r1 = logits.data[y1]
    top = r0[:, x0] * (1.0 - fx) + r0[:, x1] * fx
    bot = r1[:, x0] * (1.0 - fx) + r1[:, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return LogitMap(grid_h=out_h, grid_w=out_w, channels=logits.channels,
                    data=out)


def argmax_mask(logits: LogitMap) -> SegmentationMask:
    """Binary mask: 1 where the foreground channel wins the argmax.

    np.argmax takes the first maximum, giving the lowest-channel tie rule
    (exact foreground/background ties classify as foreground).
    """
    if logits.channels < 2:
        raise ShapeError("argmax needs a foreground and a background channel")
    winner = np.argmax(logits.data, axis=2)
    mask = (winner == 0).astype(np.uint8)
    return SegmentationMask(height=logits.grid_h, width=logits.grid_w,
                            data=mask)


def predict(query: NormalizedFeatureMap, protos: PrototypeSet) -> SegmentationMask:
    """Full query pipeline: logits -> bilinear resize to image dims -> argmax."""
    logits = compute_logits(query, protos)
    resized = upsample_bilinear(logits, query.image_h, query.image_w)
    return argmax_mask(resized)
