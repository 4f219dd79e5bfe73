"""Episodic benchmark harness: task sampling, cumulative IoU, reports.

The metric is cumulative mean-IoU: per class, intersections and unions are
summed over all tasks before dividing, then class IoUs are averaged. Task
sampling is a pure function of (manifest order, seed, task index): each
task draws its class uniformly, then N support entries and one query entry
uniformly without replacement from that class's pool, from a PCG64 stream
seeded with SeedSequence([seed, task_index]).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .annotation import BoundingBox, boxes_to_patch_labels, mask_to_tight_boxes
from .errors import DegenerateSupportError, IoError, ManifestError
from .feature_store import NormalizedFeatureMap, l2_normalize, load_feature_map
from .inference import predict
from .mask_io import load_mask_png
from .prototypes import FitConfig, SupportBatch, fit

RNG_IDENTITY = "numpy-pcg64/seedsequence([seed,task_index])"
BACKGROUND_CLASS = "__background__"


@dataclass(frozen=True)
class Episode:
    """One in-memory few-shot task: N annotated support maps, >=1 query."""

    class_id: str
    support_features: list
    support_boxes: list
    query_features: list
    query_masks: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.support_features or not self.query_features:
            raise ManifestError("episode needs >= 1 support and >= 1 query")
        if len(self.support_features) != len(self.support_boxes):
            raise ManifestError("each support map needs a box list")
        if len(self.query_features) != len(self.query_masks):
            raise ManifestError("each query map needs a ground-truth mask")


@dataclass(frozen=True)
class TaskResult:
    """Pixel counters for one task (already summed over its queries)."""

    class_id: str
    intersection: int
    union: int
    bg_intersection: int
    bg_union: int
    queries: int
    failed: bool = False
    failure_reason: str = ""
    spawn_events: int = 0
    iterations_run: int = 0


def _binary_mask(arr) -> np.ndarray:
    mask = np.asarray(arr)
    return (mask != 0).astype(np.uint8)


def run_task(episode: Episode, cfg: FitConfig = FitConfig()) -> TaskResult:
    """Fit on the episode's support set and score its queries.

    Degenerate support (single-class patch labels) marks the task failed;
    its counters stay zero and the caller excludes it from accumulation.
    """
    support_maps = []
    label_grids = []
    for fmap, boxes in zip(episode.support_features, episode.support_boxes):
        norm = fmap if isinstance(fmap, NormalizedFeatureMap) else l2_normalize(fmap)
        support_maps.append(norm)
        label_grids.append(boxes_to_patch_labels(
            boxes, image_h=fmap.image_h, image_w=fmap.image_w,
            grid_h=fmap.grid_h, grid_w=fmap.grid_w))
    try:
        batch = SupportBatch.from_maps(support_maps, label_grids)
        protos = fit(batch, cfg)
    except DegenerateSupportError as exc:
        return TaskResult(class_id=episode.class_id, intersection=0, union=0,
                          bg_intersection=0, bg_union=0, queries=0,
                          failed=True, failure_reason=str(exc))

    inter = union = bg_inter = bg_union = 0
    for fmap, gt in zip(episode.query_features, episode.query_masks):
        norm = fmap if isinstance(fmap, NormalizedFeatureMap) else l2_normalize(fmap)
        pred = predict(norm, protos).data.astype(bool)
        truth = _binary_mask(gt).astype(bool)
        if pred.shape != truth.shape:
            raise ManifestError(
                f"ground-truth mask {truth.shape} does not match image dims "
                f"{pred.shape}")
        inter += int((pred & truth).sum())
        union += int((pred | truth).sum())
        bg_inter += int((~pred & ~truth).sum())
        bg_union += int((~pred | ~truth).sum())
    return TaskResult(class_id=episode.class_id, intersection=inter,
                      union=union, bg_intersection=bg_inter,
                      bg_union=bg_union, queries=len(episode.query_features),
                      spawn_events=protos.diagnostics.spawn_events,
                      iterations_run=protos.diagnostics.iterations_run)


# --------------------------------------------------------------------------
# Benchmark manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    feature_path: Path
    image_h: int
    image_w: int
    mask_path: Path | None = None
    boxes: tuple = ()
    source_image_path: Path | None = None


@dataclass(frozen=True)
class BenchmarkManifest:
    """Per-class pools of feature/mask/box entries, in file order."""

    classes: dict
    path: Path | None = None

    def class_names(self) -> list[str]:
        return list(self.classes.keys())


def load_manifest(path) -> BenchmarkManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, dict) or "classes" not in raw:
        raise ManifestError(f"manifest {path} missing 'classes' object")
    base = path.parent
    classes = {}
    for name, entries in raw["classes"].items():
        pool = []
        for ent in entries:
            try:
                boxes = tuple(BoundingBox.from_list(b)
                              for b in ent.get("boxes", []))
                pool.append(ManifestEntry(
                    feature_path=_resolve(base, ent["feature_path"]),
                    image_h=int(ent["image_h"]),
                    image_w=int(ent["image_w"]),
                    mask_path=_resolve(base, ent["mask_path"])
                    if ent.get("mask_path") else None,
                    boxes=boxes,
                    source_image_path=_resolve(base, ent["source_image_path"])
                    if ent.get("source_image_path") else None,
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(
                    f"bad manifest entry for class {name!r}: {exc}") from exc
        if not pool:
            raise ManifestError(f"class {name!r} has an empty pool")
        classes[name] = pool
    if not classes:
        raise ManifestError(f"manifest {path} lists no classes")
    return BenchmarkManifest(classes=classes, path=path)


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _entry_boxes(entry: ManifestEntry) -> list:
    """Boxes from the manifest, or tight boxes derived from the mask."""
    if entry.boxes:
        return list(entry.boxes)
    if entry.mask_path is not None:
        return mask_to_tight_boxes(load_mask_png(entry.mask_path))
    raise ManifestError(
        f"support entry {entry.feature_path} has neither boxes nor a mask")


def load_episode(class_id: str, support: list, query: list,
                 provenance: dict | None = None) -> Episode:
    """Materialize an Episode from manifest entries (does file IO)."""
    support_features, support_boxes = [], []
    for ent in support:
        support_features.append(load_feature_map(
            ent.feature_path, image_h=ent.image_h, image_w=ent.image_w))
        support_boxes.append(_entry_boxes(ent))
    query_features, query_masks = [], []
    for ent in query:
        if ent.mask_path is None:
            raise ManifestError(
                f"query entry {ent.feature_path} lacks a ground-truth mask")
        query_features.append(load_feature_map(
            ent.feature_path, image_h=ent.image_h, image_w=ent.image_w))
        query_masks.append(load_mask_png(ent.mask_path))
    return Episode(class_id=class_id, support_features=support_features,
                   support_boxes=support_boxes, query_features=query_features,
                   query_masks=query_masks, provenance=provenance or {})


# --------------------------------------------------------------------------
# Sampling and reports
# --------------------------------------------------------------------------

def sample_task(manifest: BenchmarkManifest, seed: int, task_index: int,
                shots: int) -> tuple[str, list[int], int]:
    """Deterministic (class, support indices, query index) for one task."""
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, task_index])))
    names = manifest.class_names()
    class_id = names[int(rng.integers(len(names)))]
    pool = manifest.classes[class_id]
    if len(pool) < shots + 1:
        raise ManifestError(
            f"class {class_id!r} pool has {len(pool)} entries; "
            f"{shots + 1} needed for {shots}-shot sampling")
    picks = rng.choice(len(pool), size=shots + 1, replace=False)
    return class_id, [int(i) for i in picks[:shots]], int(picks[shots])


def run_benchmark(manifest: BenchmarkManifest, cfg: FitConfig = FitConfig(),
                  seeds=(0, 1, 2, 3, 4), tasks_per_seed: int = 1000,
                  shots: int = 1, include_background_class: bool = False,
                  jobs: int = 1) -> dict:
    """Run the episodic protocol and build a report dict.

    The report is pure data (JSON-ready, no timestamps): per-seed class
    counters, per-seed mean-IoU, the mean over seeds, a record of every
    sampled task, and the exact configuration used.
    """
    seeds = list(seeds)
    per_seed = []
    for seed in seeds:
        specs = [sample_task(manifest, seed, t, shots)
                 for t in range(tasks_per_seed)]
        results = _run_tasks(manifest, specs, cfg, seed, jobs)
        per_seed.append(_seed_report(seed, specs, results,
                                     include_background_class))
    mean_over_seeds = (
        sum(s["mean_iou"] for s in per_seed) / len(per_seed) if per_seed else 0.0)
    return {
        "metric": "cumulative-mean-iou",
        "rng": RNG_IDENTITY,
        "config": {
            "k_max": cfg.k_max,
            "bg_mixture_enabled": cfg.bg_mixture_enabled,
            "fg_refinement_enabled": cfg.fg_refinement_enabled,
            "max_iterations": cfg.max_iterations,
            "shots": shots,
            "tasks_per_seed": tasks_per_seed,
            "seeds": seeds,
            "include_background_class": include_background_class,
        },
        "seeds": per_seed,
        "mean_iou": mean_over_seeds,
    }


def _run_tasks(manifest, specs, cfg, seed, jobs):
    def one(args):
        task_index, (class_id, support_idx, query_idx) = args
        pool = manifest.classes[class_id]
        episode = load_episode(
            class_id,
            support=[pool[i] for i in support_idx],
            query=[pool[query_idx]],
            provenance={"seed": seed, "task_index": task_index})
        return run_task(episode, cfg)

    items = list(enumerate(specs))
    if jobs <= 1:
        return [one(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, items))  # merged in task-index order


def _seed_report(seed, specs, results, include_background_class):
    counters = {}
    bg_inter = bg_union = 0
    tasks = []
    failed = 0
    spawn_events = 0
    for (class_id, support_idx, query_idx), res in zip(specs, results):
        tasks.append({
            "class": class_id,
            "support": support_idx,
            "query": query_idx,
            "failed": res.failed,
            **({"reason": res.failure_reason} if res.failed else {}),
        })
        if res.failed:
            failed += 1
            continue
        spawn_events += res.spawn_events
        c = counters.setdefault(class_id,
                                {"intersection": 0, "union": 0, "tasks": 0})
        c["intersection"] += res.intersection
        c["union"] += res.union
        c["tasks"] += 1
        bg_inter += res.bg_intersection
        bg_union += res.bg_union
    per_class = {}
    for name in counters:
        c = counters[name]
        per_class[name] = {
            **c,
            "iou": (c["intersection"] / c["union"]) if c["union"] else None,
        }
    if include_background_class:
        per_class[BACKGROUND_CLASS] = {
            "intersection": bg_inter,
            "union": bg_union,
            "tasks": len(specs) - failed,
            "iou": (bg_inter / bg_union) if bg_union else None,
        }
    ious = [v["iou"] for v in per_class.values() if v["iou"] is not None]
    return {
        "seed": seed,
        "classes": per_class,
        "mean_iou": sum(ious) / len(ious) if ious else 0.0,
        "failed_tasks": failed,
        "spawn_events": spawn_events,
        "tasks": tasks,
    }


def write_report(report: dict, path) -> None:
    """Canonical JSON serialization (byte-identical across reruns)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report, sort_keys=True,
                                   separators=(",", ":")) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_AXES = ("k_max", "flags", "shots")

_FLAG_COMBOS = (
    {"bg_mixture_enabled": False, "fg_refinement_enabled": False},
    {"bg_mixture_enabled": True, "fg_refinement_enabled": False},
    {"bg_mixture_enabled": False, "fg_refinement_enabled": True},
    {"bg_mixture_enabled": True, "fg_refinement_enabled": True},
)


def sweep(manifest: BenchmarkManifest, base_cfg: FitConfig, axis: str,
          values=None, seeds=(0, 1, 2, 3, 4), tasks_per_seed: int = 1000,
          shots: int = 1, include_background_class: bool = False,
          jobs: int = 1) -> list[dict]:
    """Run run_benchmark over one sweep axis; one row per grid point."""
    if axis not in SWEEP_AXES:
        raise ManifestError(f"unknown sweep axis {axis!r}; "
                            f"pick one of {SWEEP_AXES}")
    rows = []
    if axis == "k_max":
        for k in (values or range(1, 9)):
            cfg = replace(base_cfg, k_max=int(k))
            report = run_benchmark(manifest, cfg, seeds, tasks_per_seed,
                                   shots, include_background_class, jobs)
            rows.append({"axis": "k_max", "value": int(k), "report": report})
    elif axis == "flags":
        for combo in _FLAG_COMBOS:
            cfg = replace(base_cfg, **combo)
            report = run_benchmark(manifest, cfg, seeds, tasks_per_seed,
                                   shots, include_background_class, jobs)
            label = (f"bg_mixture={'on' if combo['bg_mixture_enabled'] else 'off'},"
                     f"fg_refinement={'on' if combo['fg_refinement_enabled'] else 'off'}")
            rows.append({"axis": "flags", "value": label, "report": report})
    else:
        for n in (values or (1, 5, 10)):
            report = run_benchmark(manifest, base_cfg, seeds, tasks_per_seed,
                                   int(n), include_background_class, jobs)
            rows.append({"axis": "shots", "value": int(n), "report": report})
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "mean_iou"]
                        + [f"seed_{s['seed']}" for s in
                           (rows[0]["report"]["seeds"] if rows else [])])
        for row in rows:
            rep = row["report"]
            writer.writerow([row["axis"], row["value"], rep["mean_iou"]]
                            + [s["mean_iou"] for s in rep["seeds"]])


def write_sweep_plot(rows: list[dict], path) -> None:
    """Static curve of mean-IoU against the sweep axis."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [row["value"] for row in rows]
    ys = [row["report"]["mean_iou"] for row in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if rows and rows[0]["axis"] in ("k_max", "shots"):
        ax.plot(xs, ys, marker="o")
    else:
        ax.bar(range(len(xs)), ys)
        ax.set_xticks(range(len(xs)), [str(x) for x in xs],
                      rotation=20, ha="right", fontsize=7)
    ax.set_xlabel(rows[0]["axis"] if rows else "")
    ax.set_ylabel("mean-IoU")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
