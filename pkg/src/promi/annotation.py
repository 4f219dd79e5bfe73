"""Bounding boxes to patch-level weak labels, and masks to tight boxes.

Boxes use inclusive-min / exclusive-max integer pixel coordinates. A pixel
(x, y) belongs to patch (y*grid_h // image_h, x*grid_w // image_w), which
partitions the image exactly even when the patch size is fractional. A
patch is labeled 1 (noisy foreground) when at least half of its pixels lie
inside the union of the boxes; ties count as foreground.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AnnotationError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, [x_min, x_max) x [y_min, y_max) in pixel space."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def validate(self, image_h: int, image_w: int) -> None:
        if not (0 <= self.x_min < self.x_max <= image_w):
            raise AnnotationError(
                f"box x range [{self.x_min}, {self.x_max}) invalid for "
                f"width {image_w}"
            )
        if not (0 <= self.y_min < self.y_max <= image_h):
            raise AnnotationError(
                f"box y range [{self.y_min}, {self.y_max}) invalid for "
                f"height {image_h}"
            )

    def as_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, raw) -> "BoundingBox":
        if len(raw) != 4:
            raise AnnotationError(f"box needs 4 coordinates, got {raw!r}")
        return cls(*(int(v) for v in raw))


@dataclass(frozen=True)
class PatchLabelGrid:
    """Per-patch binary weak labels aligned with a feature grid."""

    grid_h: int
    grid_w: int
    labels: np.ndarray  # (grid_h, grid_w) uint8 in {0, 1}

    def __post_init__(self):
        if self.labels.shape != (self.grid_h, self.grid_w):
            raise AnnotationError(
                f"label shape {self.labels.shape} != ({self.grid_h}, {self.grid_w})"
            )
        if not np.isin(self.labels, (0, 1)).all():
            raise AnnotationError("labels must be 0 or 1")
        self.labels.setflags(write=False)

    def flat(self) -> np.ndarray:
        return self.labels.reshape(-1)


def pixel_to_patch_rows(image_h: int, grid_h: int) -> np.ndarray:
    """Patch row index of every pixel row (exact integer arithmetic)."""
    return (np.arange(image_h, dtype=np.int64) * grid_h) // image_h


def boxes_to_patch_labels(boxes, image_h: int, image_w: int,
                          grid_h: int, grid_w: int) -> PatchLabelGrid:
    """Convert boxes into a patch label grid via the majority-pixel rule.

    A patch gets label 1 iff the number of its pixels inside the union of
    all boxes is >= half the patch's pixel count. An empty box list yields
    all zeros.
    """
    if grid_h < 1 or grid_w < 1 or image_h < 1 or image_w < 1:
        raise AnnotationError("image and grid dims must be >= 1")
    inside = np.zeros((image_h, image_w), dtype=bool)
    for box in boxes:
        box.validate(image_h, image_w)
        inside[box.y_min:box.y_max, box.x_min:box.x_max] = True

    row_idx = pixel_to_patch_rows(image_h, grid_h)
    col_idx = pixel_to_patch_rows(image_w, grid_w)
    patch_of_pixel = row_idx[:, None] * grid_w + col_idx[None, :]

    n_patches = grid_h * grid_w
    total = np.bincount(patch_of_pixel.reshape(-1), minlength=n_patches)
    covered = np.bincount(patch_of_pixel.reshape(-1),
                          weights=inside.reshape(-1).astype(np.int64),
                          minlength=n_patches).astype(np.int64)
    labels = (2 * covered >= total).astype(np.uint8).reshape(grid_h, grid_w)
    return PatchLabelGrid(grid_h=grid_h, grid_w=grid_w, labels=labels)


_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


def mask_to_tight_boxes(mask: np.ndarray, connectivity: int = 4,
                        min_component_px: int = 1) -> list[BoundingBox]:
    """One tight box per connected foreground component of a binary mask.

    Components with fewer than ``min_component_px`` pixels are dropped.
    Boxes are ordered by scipy's component labeling (row-major discovery).
    """
    if connectivity not in (4, 8):
        raise AnnotationError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask) != 0
    if mask.ndim != 2:
        raise AnnotationError(f"mask must be 2-D, got rank {mask.ndim}")
    structure = _STRUCTURE_4 if connectivity == 4 else _STRUCTURE_8
    labeled, _ = ndimage.label(mask, structure=structure)
    boxes = []
    for comp_id, comp_slice in enumerate(ndimage.find_objects(labeled), start=1):
        if comp_slice is None:
            continue
        ys, xs = comp_slice
        if (labeled[ys, xs] == comp_id).sum() < min_component_px:
            continue
        boxes.append(BoundingBox(x_min=int(xs.start), y_min=int(ys.start),
                                 x_max=int(xs.stop), y_max=int(ys.stop)))
    return boxes
