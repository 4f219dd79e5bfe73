"""Export job description and the preprocessing constants it pins."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

# Pinned preprocessing, echoed into every manifest so runs are auditable.
PREPROCESSING = {
    "resize_filter": "bicubic",
    "rgb_mean": [0.485, 0.456, 0.406],
    "rgb_std": [0.229, 0.224, 0.225],
    "scale": "1/255",
}

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")
MASK_SUFFIX = ".mask.png"


@dataclass(frozen=True)
class ExportSpec:
    """One export run.

    The dataset root holds one directory per class; each image ``<stem>.jpg``
    (or .png/.jpeg/.bmp) pairs with a binary mask ``<stem>.mask.png``.
    ``classes`` filters which class directories are exported (e.g. one fold
    of a benchmark); empty is invalid. The resize resolution does not have
    to be divisible by the encoder patch size; grid dims are taken from the
    encoder's token output.
    """

    dataset_root: Path
    classes: tuple
    out_dir: Path
    resolution: int = 672
    encoder: str = "dinov2-vitb14"
    weights_path: Path | None = None
    connectivity: int = 4
    min_component_px: int = 1
    seed: int = 0  # weight init seed for *-untrained encoders

    def __post_init__(self):
        if not self.classes:
            raise ValueError("class list must be non-empty")
        if self.resolution < 16:
            raise ValueError(f"resolution too small: {self.resolution}")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
