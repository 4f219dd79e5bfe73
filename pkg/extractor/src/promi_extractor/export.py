"""Walk a dataset, encode images, and emit feature files plus a manifest.

Output layout mirrors the input: ``out/<class>/<stem>.npy`` feature maps
(NPY v1.0, little-endian float32, shape (Gh, Gw, D)) with ``<stem>.json``
geometry sidecars, binarized ``<stem>.mask.png`` copies, and a
``manifest.json`` at the output root whose entries carry the original
image dimensions, derived tight boxes, and source paths. Unreadable
images are skipped with a warning and recorded in the manifest.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .boxes import derive_boxes
from .encoder import PatchEncoder, build_encoder
from .spec import IMAGE_SUFFIXES, MASK_SUFFIX, PREPROCESSING, ExportSpec

logger = logging.getLogger("promi_extractor")


def list_pairs(class_dir: Path) -> list[tuple[Path, Path]]:
    """(image, mask) pairs in sorted order; images without masks skipped."""
    pairs = []
    for path in sorted(class_dir.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        if path.name.endswith(MASK_SUFFIX):
            continue
        mask = class_dir / (path.name[:-len(path.suffix)] + MASK_SUFFIX)
        if mask.is_file():
            pairs.append((path, mask))
        else:
            logger.warning("no mask for %s, skipping", path)
    return pairs


def preprocess(image: Image.Image, resolution: int) -> torch.Tensor:
    """Resize and normalize to the pinned constants; (3, R, R) float32."""
    resized = image.convert("RGB").resize((resolution, resolution),
                                          Image.Resampling.BICUBIC)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    mean = np.asarray(PREPROCESSING["rgb_mean"], dtype=np.float32)
    std = np.asarray(PREPROCESSING["rgb_std"], dtype=np.float32)
    arr = (arr - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def export_image(image_path: Path, mask_path: Path, encoder: PatchEncoder,
                 spec: ExportSpec, class_out: Path) -> dict:
    with Image.open(image_path) as img:
        orig_w, orig_h = img.size
        pixels = preprocess(img, spec.resolution)
    feats = encoder.encode(pixels)

    stem = image_path.name[:-len(image_path.suffix)]
    feat_file = class_out / f"{stem}.npy"
    with open(feat_file, "wb") as fh:
        np.save(fh, np.ascontiguousarray(feats, dtype="<f4"))
    (class_out / f"{stem}.json").write_text(json.dumps(
        {"image_h": orig_h, "image_w": orig_w}) + "\n")

    with Image.open(mask_path) as mask_img:
        mask = (np.asarray(mask_img.convert("L")) != 0).astype(np.uint8)
    if mask.shape != (orig_h, orig_w):
        raise ValueError(
            f"mask {mask_path} is {mask.shape[::-1]}, image is "
            f"{(orig_w, orig_h)}")
    out_mask = class_out / f"{stem}{MASK_SUFFIX}"
    Image.fromarray(mask * np.uint8(255), mode="L").save(out_mask,
                                                         format="PNG")
    boxes = derive_boxes(mask, connectivity=spec.connectivity,
                         min_component_px=spec.min_component_px)
    return {
        "feature_path": f"{class_out.name}/{feat_file.name}",
        "mask_path": f"{class_out.name}/{out_mask.name}",
        "boxes": boxes,
        "image_h": orig_h,
        "image_w": orig_w,
        "source_image_path": str(image_path.resolve()),
    }


def export_features(spec: ExportSpec) -> Path:
    """Run the export; returns the manifest path."""
    encoder = build_encoder(spec.encoder, weights_path=spec.weights_path,
                            seed=spec.seed)
    root = Path(spec.dataset_root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "classes": {},
        "skipped": [],
        "config": {
            "encoder": encoder.name,
            "patch_size": encoder.patch_size,
            "depth": encoder.depth,
            "resolution": spec.resolution,
            "preprocessing": PREPROCESSING,
            "connectivity": spec.connectivity,
            "min_component_px": spec.min_component_px,
        },
    }
    for class_name in spec.classes:
        class_dir = root / class_name
        if not class_dir.is_dir():
            raise FileNotFoundError(f"class directory not found: {class_dir}")
        class_out = out_dir / class_name
        class_out.mkdir(parents=True, exist_ok=True)
        entries = []
        for image_path, mask_path in list_pairs(class_dir):
            try:
                entries.append(export_image(image_path, mask_path, encoder,
                                            spec, class_out))
            except (OSError, ValueError) as exc:
                logger.warning("skipping %s: %s", image_path, exc)
                manifest["skipped"].append(
                    {"image": str(image_path), "reason": str(exc)})
        if entries:
            manifest["classes"][class_name] = entries
        else:
            logger.warning("class %s produced no entries", class_name)

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    return manifest_path
