"""Tight bounding boxes from binary masks via BFS connected components.

Same contract as the segmentation engine's annotation module (which uses
a different component-labeling backend): one inclusive-min/exclusive-max
box per foreground component under 4- or 8-connectivity, components below
``min_component_px`` dropped, boxes in row-major discovery order.
"""

from __future__ import annotations

from collections import deque

import numpy as np

_STEPS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_STEPS_8 = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                 if (dy, dx) != (0, 0))


def derive_boxes(mask: np.ndarray, connectivity: int = 4,
                 min_component_px: int = 1) -> list[list[int]]:
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    mask = np.asarray(mask) != 0
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got rank {mask.ndim}")
    steps = _STEPS_4 if connectivity == 4 else _STEPS_8
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    boxes = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            queue = deque([(y, x)])
            seen[y, x] = True
            y_min = y_max = y
            x_min = x_max = x
            count = 0
            while queue:
                cy, cx = queue.popleft()
                count += 1
                y_min, y_max = min(y_min, cy), max(y_max, cy)
                x_min, x_max = min(x_min, cx), max(x_max, cx)
                for dy, dx in steps:
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] \
                            and not seen[ny, nx]:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            if count >= min_component_px:
                boxes.append([x_min, y_min, x_max + 1, y_max + 1])
    return boxes
