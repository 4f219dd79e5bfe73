"""Materialize synthetic scenes as on-disk benchmark fixtures.

Each scene becomes one class directory holding independently sampled
feature maps (NPY + geometry sidecar), a shared ground-truth mask PNG,
and per-entry boxes, all referenced from a benchmark manifest at the
output root. Regeneration with the same scenes is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoError
from .feature_store import save_feature_map
from .inference import SegmentationMask
from .mask_io import save_mask_png
from .synth import SynthScene, patch_centers, rasterize_region, scene_boxes, _sample_map


def write_scene_pool(scenes: list[SynthScene], out_dir,
                     images_per_class: int = 6) -> Path:
    """Write per-class image pools plus a benchmark manifest; returns the
    manifest path. Image i of a scene is sampled from
    SeedSequence([scene.seed, i]) so pools of different sizes share a
    prefix."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc

    manifest = {"classes": {}}
    for scene in scenes:
        class_dir = out_dir / scene.name
        class_dir.mkdir(parents=True, exist_ok=True)
        centers = patch_centers(scene)
        gt = rasterize_region(scene)
        boxes = [b.as_list() for b in scene_boxes(scene)]
        mask_rel = f"{scene.name}/mask.png"
        save_mask_png(SegmentationMask(height=scene.image_h,
                                       width=scene.image_w, data=gt),
                      out_dir / mask_rel)
        entries = []
        for i in range(images_per_class):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([scene.seed, i])))
            fmap = _sample_map(scene, centers, rng)
            feat_rel = f"{scene.name}/img_{i:03d}.npy"
            save_feature_map(fmap, out_dir / feat_rel)
            entries.append({
                "feature_path": feat_rel,
                "mask_path": mask_rel,
                "boxes": boxes,
                "image_h": scene.image_h,
                "image_w": scene.image_w,
            })
        manifest["classes"][scene.name] = entries

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out_dir / "scenes.json").write_text(json.dumps(
        {"scenes": [s.to_dict() for s in scenes]}, indent=2, sort_keys=True)
        + "\n")
    return manifest_path
