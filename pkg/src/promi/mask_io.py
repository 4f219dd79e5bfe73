"""Mask file formats: single-channel PNG, row-major RLE JSON, overlays."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, IoError
from .inference import SegmentationMask


def save_mask_png(mask: SegmentationMask, path) -> None:
    """Write the mask as an 8-bit grayscale PNG with values 0/255."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(mask.data * np.uint8(255), mode="L").save(path,
                                                                  format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_mask_png(path) -> np.ndarray:
    """Read a mask PNG; any nonzero pixel counts as foreground."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"mask file not found: {path}")
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return (arr != 0).astype(np.uint8)


def mask_to_rle(mask: SegmentationMask) -> dict:
    """Row-major run-length encoding; counts start with a (possibly zero)
    background run, alternating background/foreground."""
    flat = mask.data.reshape(-1)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        counts = [0] + counts
    return {"height": mask.height, "width": mask.width, "counts": counts}


def rle_to_mask(payload: dict) -> SegmentationMask:
    try:
        h, w = int(payload["height"]), int(payload["width"])
        counts = [int(c) for c in payload["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad RLE payload: {exc}") from exc
    if sum(counts) != h * w:
        raise FormatError(
            f"RLE counts sum to {sum(counts)}, expected {h * w}")
    flat = np.zeros(h * w, dtype=np.uint8)
    pos = 0
    value = 0
    for run in counts:
        if value:
            flat[pos:pos + run] = 1
        pos += run
        value ^= 1
    return SegmentationMask(height=h, width=w, data=flat.reshape(h, w))


def save_mask_rle(mask: SegmentationMask, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(mask_to_rle(mask), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_overlay_png(mask: SegmentationMask, source_image_path, path,
                     color=(255, 64, 64), alpha: float = 0.5) -> None:
    """Alpha-blend the mask onto the source image for visual inspection."""
    src = Path(source_image_path)
    if not src.is_file():
        raise IoError(f"source image not found: {src}")
    try:
        with Image.open(src) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise IoError(f"cannot read {src}: {exc}") from exc
    if rgb.shape[:2] != (mask.height, mask.width):
        raise FormatError(
            f"source image is {rgb.shape[1]}x{rgb.shape[0]}, mask is "
            f"{mask.width}x{mask.height}")
    tint = np.asarray(color, dtype=np.float64)
    fg = mask.data.astype(bool)
    rgb[fg] = (1.0 - alpha) * rgb[fg] + alpha * tint
    out = Image.fromarray(np.clip(rgb, 0, 255).astype(np.uint8), mode="RGB")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        out.save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
